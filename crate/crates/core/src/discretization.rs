//! Structured grids on an axis-aligned box, nodal fields with homogeneous
//! Dirichlet data, quadrature, discrete norms and the weighted p-Laplacian
//! residuals.
//!
//! Each grid cell is split into `d!` simplices (the Kuhn subdivision). On a
//! simplex every gradient component is a single difference along a cell edge,
//! so in 1D the element gradients are exactly the face differences
//! `(u[i+1] - u[i]) / h`, and in 2D/3D they are face differences taken along
//! the edge path of the simplex. The gradient is exact for affine fields and
//! the discrete energy `sum vol |grad u|^p / p` is a genuine convex function of
//! the nodal values, which the Newton solver relies on.
//!
//! Two quadratures are used:
//! * midpoint (simplex barycenter) for norms of fields, order 2;
//! * lumped (nodal, weight = dual cell volume) for the reaction and source
//!   terms of the discrete equations, and for integrals that are checked
//!   against those equations.

use std::io::{self, Write};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{KmsError, Result};
use crate::linalg::SparsityPattern;
use crate::nonlinearity::{truncate, NonlinearitySpec, TruncationLevel};
use crate::plaplace;

/// Simplex of the Kuhn subdivision: `verts[j] = verts[j-1] + e_{perm[j-1]}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Simplex {
    pub verts: [usize; 4],
    pub perm: [u8; 3],
}

/// Axis-aligned structured grid with `n_per_axis` nodes on each of `d` axes.
#[derive(Debug)]
pub struct Grid {
    d: usize,
    n_per_axis: usize,
    extent: Vec<(f64, f64)>,
    h: Vec<f64>,
    strides: Vec<usize>,
    boundary: Vec<bool>,
    interior_of: Vec<usize>,
    interior: Vec<usize>,
    elements: Vec<Simplex>,
    element_volume: f64,
    lumped_mass: Vec<f64>,
    pattern: OnceLock<Arc<SparsityPattern>>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.n_per_axis == other.n_per_axis && self.extent == other.extent
    }
}

/// Marks boundary nodes in `interior_of`.
pub const NOT_INTERIOR: usize = usize::MAX;

fn factorial(d: usize) -> usize {
    (1..=d).product()
}

fn permutations(d: usize) -> Vec<[u8; 3]> {
    let mut out = Vec::new();
    let mut perm: Vec<u8> = (0..d as u8).collect();
    fn rec(k: usize, perm: &mut Vec<u8>, out: &mut Vec<[u8; 3]>) {
        if k == perm.len() {
            let mut p = [0u8; 3];
            p[..perm.len()].copy_from_slice(perm);
            out.push(p);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            rec(k + 1, perm, out);
            perm.swap(k, i);
        }
    }
    rec(0, &mut perm, &mut out);
    out.sort();
    out
}

impl Grid {
    /// Grid on the box `extent` (one `(lo, hi)` pair per axis).
    pub fn new(d: usize, n_per_axis: usize, extent: Vec<(f64, f64)>) -> Result<Arc<Self>> {
        if !(1..=3).contains(&d) {
            return Err(KmsError::InvalidParameter(format!("grid dimension {d} not in 1..=3")));
        }
        if n_per_axis < 3 {
            return Err(KmsError::InvalidParameter(format!(
                "need at least 3 nodes per axis, got {n_per_axis}"
            )));
        }
        if extent.len() != d || extent.iter().any(|&(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
            return Err(KmsError::InvalidParameter("extent must be d finite intervals".into()));
        }
        let n = n_per_axis;
        let h: Vec<f64> = extent.iter().map(|&(a, b)| (b - a) / (n - 1) as f64).collect();
        let mut strides = vec![1usize; d];
        for a in 1..d {
            strides[a] = strides[a - 1] * n;
        }
        let total = n.pow(d as u32);
        let mut boundary = vec![false; total];
        let mut interior_of = vec![NOT_INTERIOR; total];
        let mut interior = Vec::new();
        for (idx, b) in boundary.iter_mut().enumerate() {
            let on_edge = (0..d).any(|a| {
                let i = (idx / strides[a]) % n;
                i == 0 || i == n - 1
            });
            *b = on_edge;
            if !on_edge {
                interior_of[idx] = interior.len();
                interior.push(idx);
            }
        }

        let perms = permutations(d);
        let cells = (n - 1).pow(d as u32);
        let mut elements = Vec::with_capacity(cells * perms.len());
        for c in 0..cells {
            let mut base = 0;
            let mut rem = c;
            for &s in strides.iter() {
                base += (rem % (n - 1)) * s;
                rem /= n - 1;
            }
            for perm in &perms {
                let mut verts = [0usize; 4];
                verts[0] = base;
                for j in 0..d {
                    verts[j + 1] = verts[j] + strides[perm[j] as usize];
                }
                elements.push(Simplex { verts, perm: *perm });
            }
        }
        let cell_volume: f64 = h.iter().product();
        let element_volume = cell_volume / factorial(d) as f64;
        let mut lumped_mass = vec![0.0; total];
        let share = element_volume / (d + 1) as f64;
        for e in &elements {
            for &v in &e.verts[..=d] {
                lumped_mass[v] += share;
            }
        }
        Ok(Arc::new(Self {
            d,
            n_per_axis,
            extent,
            h,
            strides,
            boundary,
            interior_of,
            interior,
            elements,
            element_volume,
            lumped_mass,
            pattern: OnceLock::new(),
        }))
    }

    /// Unit interval, square or cube.
    pub fn unit(d: usize, n_per_axis: usize) -> Result<Arc<Self>> {
        Self::new(d, n_per_axis, vec![(0.0, 1.0); d])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    pub fn extent(&self) -> &[(f64, f64)] {
        &self.extent
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn num_nodes(&self) -> usize {
        self.boundary.len()
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// Interior unknown index of a node, or [`NOT_INTERIOR`].
    pub fn interior_index(&self, node: usize) -> usize {
        self.interior_of[node]
    }

    pub fn elements(&self) -> &[Simplex] {
        &self.elements
    }

    pub fn element_volume(&self) -> f64 {
        self.element_volume
    }

    /// Dual-cell volume of each node.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    pub fn measure(&self) -> f64 {
        self.extent.iter().map(|&(a, b)| b - a).product()
    }

    /// Smallest spacing over all axes.
    pub fn min_spacing(&self) -> f64 {
        self.h.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        self.write_coords(node, &mut x);
        x
    }

    pub fn write_coords(&self, node: usize, x: &mut [f64]) {
        for (a, xa) in x.iter_mut().enumerate().take(self.d) {
            let i = (node / self.strides[a]) % self.n_per_axis;
            *xa = self.extent[a].0 + i as f64 * self.h[a];
        }
    }

    /// Gradient of the hat function of local vertex `j` on an element, as a
    /// list of (axis, coefficient) pairs.
    pub(crate) fn hat_gradient(&self, e: &Simplex, j: usize) -> [(usize, f64); 2] {
        let mut out = [(0usize, 0.0f64); 2];
        if j >= 1 {
            let a = e.perm[j - 1] as usize;
            out[0] = (a, 1.0 / self.h[a]);
        }
        if j < self.d {
            let a = e.perm[j] as usize;
            out[1] = (a, -1.0 / self.h[a]);
        }
        out
    }

    /// Element gradient of nodal values `u`.
    #[inline]
    pub fn element_gradient(&self, e: &Simplex, u: &[f64], g: &mut [f64; 3]) {
        for j in 0..self.d {
            let a = e.perm[j] as usize;
            g[a] = (u[e.verts[j + 1]] - u[e.verts[j]]) / self.h[a];
        }
    }

    pub(crate) fn pattern(&self) -> Arc<SparsityPattern> {
        self.pattern
            .get_or_init(|| Arc::new(SparsityPattern::from_grid(self)))
            .clone()
    }
}

/// Nodal scalar field on a grid. Boundary values are exactly zero unless the
/// field was built with [`Field::without_boundary_condition`].
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.num_nodes()],
        }
    }

    /// Samples `f` at interior nodes; boundary nodes are set to 0.
    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut values = vec![0.0; grid.num_nodes()];
        let mut x = vec![0.0; grid.dim()];
        for &node in grid.interior_nodes() {
            grid.write_coords(node, &mut x);
            values[node] = f(&x);
        }
        Self {
            grid: grid.clone(),
            values,
        }
    }

    /// Wraps nodal values; rejects nonzero boundary values.
    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(KmsError::InvalidParameter(format!(
                "expected {} nodal values, got {}",
                grid.num_nodes(),
                values.len()
            )));
        }
        if grid
            .boundary_mask()
            .iter()
            .zip(&values)
            .any(|(&b, &v)| b && v != 0.0)
        {
            return Err(KmsError::InvalidParameter(
                "field violates the homogeneous Dirichlet condition".into(),
            ));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Samples `f` at every node including the boundary. Only for test
    /// fixtures; the result does not satisfy the Dirichlet condition.
    pub fn without_boundary_condition(grid: &Arc<Grid>, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.num_nodes())
            .map(|node| {
                grid.write_coords(node, &mut x);
                f(&x)
            })
            .collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub(crate) fn check_grid(&self, other: &Field) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(KmsError::GridMismatch)
        }
    }

    /// Applies `f` nodewise, keeping the boundary at zero.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let mask = self.grid.boundary_mask();
        let values = self
            .values
            .iter()
            .zip(mask)
            .map(|(&v, &b)| if b { 0.0 } else { f(v) })
            .collect();
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        self.map(|v| lambda * v)
    }

    pub fn sub(&self, other: &Field) -> Result<Self> {
        self.check_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self {
            grid: self.grid.clone(),
            values,
        })
    }

    pub fn mul(&self, other: &Field) -> Result<Self> {
        self.check_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(Self {
            grid: self.grid.clone(),
            values,
        })
    }

    /// `T_k` applied nodewise; `k = inf` is the identity.
    pub fn truncated(&self, k: f64) -> Result<Self> {
        if k.is_infinite() && k > 0.0 {
            return Ok(self.clone());
        }
        let lvl = TruncationLevel::new(k)?;
        Ok(self.map(|v| truncate(lvl, v)))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Minimum over interior nodes (0 if there are none).
    pub fn interior_min(&self) -> f64 {
        self.grid
            .interior_nodes()
            .iter()
            .map(|&i| self.values[i])
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV snapshot: header `x[,y[,z]],value`, one row per node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let axes = ["x", "y", "z"];
        let header: Vec<&str> = axes[..self.grid.dim()].to_vec();
        writeln!(w, "{},value", header.join(","))?;
        let mut x = vec![0.0; self.grid.dim()];
        for (node, v) in self.values.iter().enumerate() {
            self.grid.write_coords(node, &mut x);
            for c in &x {
                write!(w, "{c},")?;
            }
            writeln!(w, "{v}")?;
        }
        Ok(())
    }
}

/// Sum in a fixed pairwise order, independent of how terms were produced.
pub fn pairwise_sum(terms: &[f64]) -> f64 {
    match terms.len() {
        0 => 0.0,
        1 => terms[0],
        n if n <= 8 => terms.iter().sum(),
        n => {
            let (a, b) = terms.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Element gradients of `u`: one `d`-vector per simplex, in element order.
pub fn gradient_at_faces(u: &Field) -> Vec<Vec<f64>> {
    let grid = u.grid();
    let d = grid.dim();
    let mut g = [0.0; 3];
    grid.elements()
        .iter()
        .map(|e| {
            grid.element_gradient(e, u.values(), &mut g);
            g[..d].to_vec()
        })
        .collect()
}

/// Midpoint quadrature of `phi(u at barycenter)` over the domain.
pub fn midpoint_integral(u: &Field, mut phi: impl FnMut(f64) -> f64) -> f64 {
    let grid = u.grid();
    let d = grid.dim();
    let inv = 1.0 / (d + 1) as f64;
    let vol = grid.element_volume();
    let vals = u.values();
    let terms: Vec<f64> = grid
        .elements()
        .iter()
        .map(|e| {
            let mean = e.verts[..=d].iter().map(|&v| vals[v]).sum::<f64>() * inv;
            phi(mean) * vol
        })
        .collect();
    pairwise_sum(&terms)
}

/// Lumped (nodal) quadrature of a nodal integrand.
pub fn lumped_integral(grid: &Grid, integrand: &[f64]) -> f64 {
    let terms: Vec<f64> = integrand
        .iter()
        .zip(grid.lumped_mass())
        .map(|(f, m)| f * m)
        .collect();
    pairwise_sum(&terms)
}

/// Discrete `L^q` norm with midpoint quadrature.
pub fn lq_norm(u: &Field, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(KmsError::InvalidParameter(format!("L^q norm needs q >= 1, got {q}")));
    }
    let s = midpoint_integral(u, |v| crate::nonlinearity::pow_abs(v, q));
    Ok(s.powf(1.0 / q))
}

/// `sum_e vol |grad u_e|^p`, the p-th power of the `W^{1,p}` seminorm.
pub fn gradient_p_energy(u: &Field, p: f64) -> f64 {
    let grid = u.grid();
    let vol = grid.element_volume();
    let mut g = [0.0; 3];
    let terms: Vec<f64> = grid
        .elements()
        .iter()
        .map(|e| {
            grid.element_gradient(e, u.values(), &mut g);
            let n2: f64 = g[..grid.dim()].iter().map(|c| c * c).sum();
            crate::nonlinearity::pow_abs(n2.sqrt(), p) * vol
        })
        .collect();
    pairwise_sum(&terms)
}

/// Discrete `W^{1,p}_0` seminorm `(sum_e vol |grad u_e|^p)^{1/p}`.
pub fn w1p_seminorm(u: &Field, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(KmsError::InvalidParameter(format!("W^1,p seminorm needs p >= 1, got {p}")));
    }
    Ok(gradient_p_energy(u, p).powf(1.0 / p))
}

/// Kirchhoff coefficient `1/k + ||grad u||_p^p + ||grad v||_p^p`; pass
/// `k = f64::INFINITY` to drop the `1/k` term.
pub fn nonlocal_coefficient(u: &Field, v: &Field, p: f64, k: f64) -> Result<f64> {
    u.check_grid(v)?;
    Ok(1.0 / k + gradient_p_energy(u, p) + gradient_p_energy(v, p))
}

/// Weak form of `-div(A flux_eps(grad u))` tested against every hat function:
/// `out[i] = A sum_e vol flux_eps(grad u_e) . grad phi_i` (all nodes).
pub(crate) fn diffusion_action(u: &Field, a: f64, p: f64, eps: f64) -> Vec<f64> {
    let grid = u.grid();
    let d = grid.dim();
    let vol = grid.element_volume();
    let vals = u.values();
    let mut out = vec![0.0; grid.num_nodes()];
    let mut g = [0.0; 3];
    for e in grid.elements() {
        grid.element_gradient(e, vals, &mut g);
        let scale = a * vol * plaplace::flux_scale(&g[..d], p, eps);
        for j in 0..=d {
            let mut dot = 0.0;
            for (axis, c) in grid.hat_gradient(e, j) {
                dot += c * g[axis];
            }
            out[e.verts[j]] += scale * dot;
        }
    }
    out
}

/// Strong-form residual of `-div(A flux_eps(grad u)) + reaction = source` at
/// interior nodes (boundary entries are 0). The diffusion part is the weak
/// action divided by the lumped mass, i.e. the finite-difference operator.
pub fn weighted_plap_residual(
    u: &Field,
    a: f64,
    p: f64,
    eps_reg: f64,
    reaction: &Field,
    source: &Field,
) -> Result<Field> {
    if !(a > 0.0) {
        return Err(KmsError::InvalidParameter(format!("coefficient A = {a} must be positive")));
    }
    u.check_grid(reaction)?;
    u.check_grid(source)?;
    let grid = u.grid();
    let action = diffusion_action(u, a, p, eps_reg);
    let mass = grid.lumped_mass();
    let mut out = Field::zeros(grid);
    for &i in grid.interior_nodes() {
        out.values[i] = action[i] / mass[i] + reaction.values[i] - source.values[i];
    }
    Ok(out)
}

/// Which equation of the coupled system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Equation {
    /// `-div(A |grad u|^{p-2} grad u) + g(x,u,v) = f_k`.
    First,
    /// `-div(A |grad v|^{p-2} grad v) = h(x,u,v) + 1/k`.
    Second,
}

/// `||phi_i||_{W^{1,p}}` for the hat function of every node.
pub fn hat_norms(grid: &Grid, p: f64) -> Vec<f64> {
    let d = grid.dim();
    let vol = grid.element_volume();
    let mut acc = vec![0.0; grid.num_nodes()];
    for e in grid.elements() {
        for j in 0..=d {
            let n2: f64 = grid.hat_gradient(e, j).iter().map(|(_, c)| c * c).sum();
            acc[e.verts[j]] += vol * crate::nonlinearity::pow_abs(n2.sqrt(), p);
        }
    }
    acc.into_iter().map(|s| s.powf(1.0 / p)).collect()
}

/// `max_i |R_i| / ||phi_i||_{W^{1,p}}` over interior hats.
pub fn dual_norm_of(grid: &Grid, weak_residual: &[f64], hat_norms: &[f64]) -> f64 {
    grid.interior_nodes()
        .iter()
        .map(|&i| weak_residual[i].abs() / hat_norms[i])
        .fold(0.0, f64::max)
}

/// Weak residual vector (all nodes, boundary entries 0) of one equation of
/// the approximate system with the coefficient evaluated from `(u, v)`.
#[allow(clippy::too_many_arguments)]
pub fn weak_residual(
    u: &Field,
    v: &Field,
    f: &Field,
    spec: &NonlinearitySpec,
    p: f64,
    which: Equation,
    k: f64,
    eps_reg: f64,
) -> Result<Vec<f64>> {
    u.check_grid(v)?;
    u.check_grid(f)?;
    let a = nonlocal_coefficient(u, v, p, k)?;
    let grid = u.grid();
    let mass = grid.lumped_mass();
    let mut x = vec![0.0; grid.dim()];
    let (w, fk) = match which {
        Equation::First => (u, Some(f.truncated(k)?)),
        Equation::Second => (v, None),
    };
    let mut r = diffusion_action(w, a, p, eps_reg);
    for (node, ri) in r.iter_mut().enumerate() {
        if grid.boundary_mask()[node] {
            *ri = 0.0;
            continue;
        }
        grid.write_coords(node, &mut x);
        let (s, t) = (u.values[node], v.values[node]);
        let local = match (&fk, which) {
            (Some(fk), Equation::First) => spec.g_eval(&x, s, t) - fk.values[node],
            _ => -(spec.h_eval(&x, s, t) + 1.0 / k),
        };
        *ri += mass[node] * local;
    }
    Ok(r)
}

/// Discrete dual norm of the weak-form mismatch of one equation, taken over
/// interior hat test functions normalized in `W^{1,p}`.
#[allow(clippy::too_many_arguments)]
pub fn weak_residual_dual_norm(
    u: &Field,
    v: &Field,
    f: &Field,
    spec: &NonlinearitySpec,
    p: f64,
    which: Equation,
    k: f64,
    eps_reg: f64,
) -> Result<f64> {
    let r = weak_residual(u, v, f, spec, p, which, k, eps_reg)?;
    let hats = hat_norms(u.grid(), p);
    Ok(dual_norm_of(u.grid(), &r, &hats))
}
