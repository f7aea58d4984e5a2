//! Fixtures shared by the criterion benchmarks.

use std::f64::consts::PI;
use std::sync::Arc;

use kmslab::{Field, Grid, NonlinearitySpec, SolveConfig};

/// Coupled problem with `p = 2`, `r = 2`, `theta = 1/2`, `f = 1` on the unit
/// cube of dimension `d` with `n` nodes per axis.
pub fn coupled_fixture(d: usize, n: usize, k: f64) -> (Field, NonlinearitySpec, SolveConfig) {
    let grid = Grid::unit(d, n).expect("valid grid");
    let f = Field::from_fn(&grid, |_| 1.0);
    let spec = NonlinearitySpec::prototype(2.0, 0.5).expect("valid exponents");
    (f, spec, SolveConfig::new(k, 2.0))
}

/// Source of the scalar problem whose `p = 2` solution is a product of sines.
pub fn sine_source(grid: &Arc<Grid>) -> Field {
    let d = grid.dim() as f64;
    Field::from_fn(grid, |x| d * PI * PI * x.iter().map(|c| (PI * c).sin()).product::<f64>())
}

/// Smooth field for residual and norm evaluation.
pub fn bump(grid: &Arc<Grid>) -> Field {
    Field::from_fn(grid, |x| x.iter().map(|c| c * (1.0 - c)).product::<f64>())
}
