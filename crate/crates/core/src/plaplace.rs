//! Pointwise p-Laplacian flux algebra and the monotonicity inequalities with
//! explicit constants.

use serde::Serialize;

use crate::discretization::{gradient_p_energy, Field};
use crate::error::{KmsError, Result};
use crate::nonlinearity::pow_abs;

fn check_p(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(KmsError::InvalidParameter(format!("p-Laplacian needs p > 1, got {p}")))
    }
}

fn norm2(xi: &[f64]) -> f64 {
    xi.iter().map(|c| c * c).sum()
}

/// Scalar factor `(|xi|^2 + eps^2)^{(p-2)/2}` of the (regularized) flux.
/// Returns 0 at `xi = 0, eps = 0`, which gives the continuous extension of the
/// flux itself.
#[inline]
pub fn flux_scale(xi: &[f64], p: f64, eps: f64) -> f64 {
    if p == 2.0 {
        return 1.0;
    }
    let s = norm2(xi) + eps * eps;
    if s == 0.0 {
        0.0
    } else {
        s.powf(0.5 * (p - 2.0))
    }
}

/// `|xi|^{p-2} xi`, extended by 0 at the origin.
pub fn flux(xi: &[f64], p: f64) -> Result<Vec<f64>> {
    check_p(p)?;
    let c = flux_scale(xi, p, 0.0);
    Ok(xi.iter().map(|x| c * x).collect())
}

/// `(|xi|^2 + eps^2)^{(p-2)/2} xi`.
pub fn regularized_flux(xi: &[f64], p: f64, eps: f64) -> Vec<f64> {
    let c = flux_scale(xi, p, eps.abs());
    xi.iter().map(|x| c * x).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityConstants {
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
}

pub fn monotonicity_constants(p: f64) -> Result<MonotonicityConstants> {
    check_p(p)?;
    let first = 2f64.powf(p - 2.0);
    let second = (2f64.powf((2.0 - p) / 2.0) / (p - 1.0)).powf(p / 2.0);
    let beta = if p < 2.0 { 2.0 / (2.0 - p) } else { 0.0 };
    Ok(MonotonicityConstants {
        c: first.max(second),
        alpha: (p / 2.0).min(1.0),
        beta,
        p,
    })
}

/// Flux pairing `(flux(A) - flux(B)) . (A - B)`.
pub fn flux_pairing(a: &[f64], b: &[f64], p: f64) -> f64 {
    let ca = flux_scale(a, p, 0.0);
    let cb = flux_scale(b, p, 0.0);
    a.iter().zip(b).map(|(x, y)| (ca * x - cb * y) * (x - y)).sum()
}

/// Lower bound for the flux pairing: `|A-B|^p / 2^{p-2}` for `p >= 2`, and
/// `(p-1)|A-B|^2 / (1+|A|^2+|B|^2)^{(2-p)/2}` for `p < 2`.
pub fn pairing_lower_bound(a: &[f64], b: &[f64], p: f64) -> f64 {
    let diff2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if p >= 2.0 {
        pow_abs(diff2.sqrt(), p) / 2f64.powf(p - 2.0)
    } else {
        (p - 1.0) * diff2 / (1.0 + norm2(a) + norm2(b)).powf((2.0 - p) / 2.0)
    }
}

/// Pairing minus its lower bound; nonnegative up to rounding.
pub fn pointwise_monotonicity_gap(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    check_p(p)?;
    if a.len() != b.len() {
        return Err(KmsError::InvalidParameter("vectors differ in length".into()));
    }
    Ok(flux_pairing(a, b, p) - pairing_lower_bound(a, b, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormMonotonicity {
    /// `||grad(u1 - u2)||_p^p`.
    pub lhs: f64,
    /// `C pairing^alpha (1 + ||grad u1||_p^p + ||grad u2||_p^p)^beta`.
    pub rhs: f64,
    pub pairing: f64,
    pub constants: MonotonicityConstants,
}

impl NormMonotonicity {
    pub fn holds(&self, tol_rel: f64) -> bool {
        self.lhs <= self.rhs * (1.0 + tol_rel)
    }
}

/// Integrated monotonicity inequality on discrete fields, using the same
/// element gradients as the solver.
pub fn norm_monotonicity_check(u1: &Field, u2: &Field, p: f64) -> Result<NormMonotonicity> {
    check_p(p)?;
    u1.check_grid(u2)?;
    let grid = u1.grid();
    let d = grid.dim();
    let vol = grid.element_volume();
    let (mut g1, mut g2) = ([0.0; 3], [0.0; 3]);
    let terms: Vec<f64> = grid
        .elements()
        .iter()
        .map(|e| {
            grid.element_gradient(e, u1.values(), &mut g1);
            grid.element_gradient(e, u2.values(), &mut g2);
            vol * flux_pairing(&g1[..d], &g2[..d], p)
        })
        .collect();
    let pairing = crate::discretization::pairwise_sum(&terms).max(0.0);
    let lhs = gradient_p_energy(&u1.sub(u2)?, p);
    let k = monotonicity_constants(p)?;
    let base = 1.0 + gradient_p_energy(u1, p) + gradient_p_energy(u2, p);
    let rhs = k.c * pairing.powf(k.alpha) * base.powf(k.beta);
    Ok(NormMonotonicity {
        lhs,
        rhs,
        pairing,
        constants: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::Grid;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn flux_examples() {
        assert_eq!(flux(&[0.3, -1.7], 2.0).unwrap(), vec![0.3, -1.7]);
        assert_eq!(flux(&[2.0, 0.0], 3.0).unwrap(), vec![4.0, 0.0]);
        for p in [1.2, 1.5, 3.0] {
            assert_eq!(flux(&[0.0, 0.0, 0.0], p).unwrap(), vec![0.0; 3]);
        }
        assert!(flux(&[1.0], 1.0).is_err());
        assert!(flux(&[1.0], 0.5).is_err());
    }

    #[test]
    fn regularized_flux_examples() {
        let xi = [0.4, -2.0];
        let a = regularized_flux(&xi, 1.7, 0.0);
        let b = flux(&xi, 1.7).unwrap();
        assert_eq!(a, b);
        assert_eq!(regularized_flux(&xi, 2.0, 0.3), xi.to_vec());
        assert_eq!(regularized_flux(&[0.0], 1.5, 0.1), vec![0.0]);
    }

    #[test]
    fn constants_examples() {
        let k = monotonicity_constants(2.0).unwrap();
        assert_eq!((k.c, k.alpha, k.beta), (1.0, 1.0, 0.0));
        let k = monotonicity_constants(3.0).unwrap();
        assert_eq!((k.c, k.alpha, k.beta), (2.0, 1.0, 0.0));
        let k = monotonicity_constants(1.5).unwrap();
        assert_eq!(k.alpha, 0.75);
        assert_eq!(k.beta, 4.0);
        assert_relative_eq!(k.c, (2f64.powf(0.25) / 0.5).powf(0.75), max_relative = 1e-15);
        assert!(monotonicity_constants(1.0).is_err());
    }

    #[test]
    fn gap_examples() {
        assert!(pointwise_monotonicity_gap(&[1.0, 0.0], &[0.0, 1.0], 2.0).unwrap().abs() < 1e-15);
        assert_relative_eq!(
            pointwise_monotonicity_gap(&[1.0, 0.0], &[0.0, 0.0], 3.0).unwrap(),
            0.5,
            max_relative = 1e-15
        );
        for p in [1.2, 2.0, 4.0] {
            assert_eq!(pointwise_monotonicity_gap(&[0.7, -0.2], &[0.7, -0.2], p).unwrap(), 0.0);
        }
    }

    #[test]
    fn regularization_error_is_second_order() {
        for p in [1.3, 1.5, 2.5, 4.0] {
            for &r in &[0.5, 1.0, 3.0] {
                for &eps in &[1e-2, 1e-3] {
                    let xi = [r];
                    let rel = (regularized_flux(&xi, p, eps)[0] / flux(&xi, p).unwrap()[0] - 1.0).abs();
                    let lead = eps * eps * (p - 2.0).abs() / (2.0 * r * r);
                    assert!(rel <= lead * 1.01 + 1e-14, "p={p} r={r} eps={eps}: {rel} vs {lead}");
                }
            }
        }
    }

    fn smooth_fields(grid: &std::sync::Arc<Grid>, seed: u64) -> (Field, Field) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let u1 = Field::from_fn(grid, |x| {
            c[0] * (std::f64::consts::PI * x[0]).sin() + c[1] * (3.0 * std::f64::consts::PI * x[0]).sin()
                + c[2] * x[0] * (1.0 - x[0])
        });
        let u2 = Field::from_fn(grid, |x| {
            c[3] * (2.0 * std::f64::consts::PI * x[0]).sin() + c[4] * x[0] * x[0] * (1.0 - x[0]) + c[5]
        });
        (u1, u2)
    }

    #[test]
    fn norm_check_examples() {
        let g = Grid::unit(1, 65).unwrap();
        let (u1, u2) = smooth_fields(&g, 3);
        let same = norm_monotonicity_check(&u1, &u1, 3.0).unwrap();
        assert_eq!((same.lhs, same.rhs), (0.0, 0.0));
        let same = norm_monotonicity_check(&u1, &u1, 1.5).unwrap();
        assert!(same.lhs == 0.0 && same.rhs >= 0.0);
        let eq = norm_monotonicity_check(&u1, &u2, 2.0).unwrap();
        assert_relative_eq!(eq.lhs, eq.rhs, max_relative = 1e-12);
        let r = norm_monotonicity_check(&u1, &u2, 1.5).unwrap();
        assert!(r.holds(1e-12), "{r:?}");
        let other = Grid::unit(1, 9).unwrap();
        assert!(norm_monotonicity_check(&u1, &Field::zeros(&other), 2.0).is_err());
    }

    proptest! {
        #[test]
        fn flux_odd_and_homogeneous(
            xi in prop::collection::vec(-5.0f64..5.0, 1..=3),
            p in 1.1f64..5.0,
            lambda in 0.01f64..20.0,
        ) {
            let f = flux(&xi, p).unwrap();
            let neg: Vec<f64> = xi.iter().map(|x| -x).collect();
            let fneg = flux(&neg, p).unwrap();
            let scaled: Vec<f64> = xi.iter().map(|x| lambda * x).collect();
            let fs = flux(&scaled, p).unwrap();
            let lp = lambda.powf(p - 1.0);
            for i in 0..xi.len() {
                prop_assert_eq!(fneg[i], -f[i]);
                prop_assert!((fs[i] - lp * f[i]).abs() <= 1e-10 * (lp * f[i]).abs().max(1e-300));
            }
        }

        #[test]
        fn gap_nonnegative(
            a in prop::collection::vec(-10.0f64..10.0, 3),
            b in prop::collection::vec(-10.0f64..10.0, 3),
            p in prop::sample::select(vec![1.2, 1.5, 2.0, 3.0, 4.0]),
            d in 1usize..=3,
        ) {
            let gap = pointwise_monotonicity_gap(&a[..d], &b[..d], p).unwrap();
            let na: f64 = a[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(gap >= -1e-10 * (1.0 + na + nb).powf(p));
        }

        #[test]
        fn norm_inequality_on_random_fields(seed in 0u64..10_000, p in prop::sample::select(vec![1.2, 1.5, 2.0, 3.0, 4.0])) {
            let g = Grid::unit(1, 33).unwrap();
            let (u1, u2) = smooth_fields(&g, seed);
            let r = norm_monotonicity_check(&u1, &u2, p).unwrap();
            prop_assert!(r.holds(1e-10), "{:?}", r);
        }
    }
}
