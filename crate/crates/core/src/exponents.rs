//! Exponent, threshold and regularizing-zone arithmetic.
//!
//! Everything here is closed-form double precision arithmetic. Comparisons
//! against thresholds use the inequality symbols of the underlying theory
//! (strict or not), and any comparison that lands within [`THRESHOLD_TOL`]
//! of its threshold is reported by name so callers never silently rely on
//! which side of a tie floating point happened to pick.

use serde::{Deserialize, Serialize};

use crate::error::{KmsError, Result};

/// Relative tolerance under which a value is reported as sitting on a threshold.
pub const THRESHOLD_TOL: f64 = 1e-12;

fn near(value: f64, threshold: f64) -> bool {
    (value - threshold).abs() <= THRESHOLD_TOL * threshold.abs().max(1.0)
}

/// Analytic parameter tuple of the coupled system plus the growth constants
/// of the coupling nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    /// Analytic space dimension (independent of the computational grid).
    #[serde(rename = "N")]
    pub n_dim: f64,
    pub p: f64,
    pub r: f64,
    pub theta: f64,
    pub m: f64,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default = "one")]
    pub d1: f64,
    #[serde(default = "one")]
    pub d2: f64,
}

fn one() -> f64 {
    1.0
}

impl ProblemParams {
    /// Parameters with unit growth constants (the prototype nonlinearities).
    pub fn new(n_dim: f64, p: f64, r: f64, theta: f64, m: f64) -> Result<Self> {
        Self::with_constants(n_dim, p, r, theta, m, [1.0, 1.0, 1.0, 1.0])
    }

    /// `constants` is `[c1, c2, d1, d2]`.
    pub fn with_constants(
        n_dim: f64,
        p: f64,
        r: f64,
        theta: f64,
        m: f64,
        constants: [f64; 4],
    ) -> Result<Self> {
        let [c1, c2, d1, d2] = constants;
        let params = Self {
            n_dim,
            p,
            r,
            theta,
            m,
            c1,
            c2,
            d1,
            d2,
        };
        params.validate()?;
        Ok(params)
    }

    /// Re-checks the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.n_dim, self.p, self.r, self.theta, self.m, self.c1, self.c2, self.d1, self.d2,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(KmsError::InvalidParameter("non-finite parameter".into()));
        }
        if self.n_dim <= 2.0 {
            return Err(KmsError::InvalidParameter(format!("N = {} must exceed 2", self.n_dim)));
        }
        if self.p <= 1.0 || self.p >= self.n_dim {
            return Err(KmsError::InvalidParameter(format!(
                "p = {} must lie in (1, N = {})",
                self.p, self.n_dim
            )));
        }
        if self.r <= 1.0 {
            return Err(KmsError::InvalidParameter(format!("r = {} must exceed 1", self.r)));
        }
        if self.theta <= 0.0 {
            return Err(KmsError::InvalidParameter(format!(
                "theta = {} must be positive",
                self.theta
            )));
        }
        if self.m <= 1.0 {
            return Err(KmsError::InvalidParameter(format!("m = {} must exceed 1", self.m)));
        }
        if [self.c1, self.c2, self.d1, self.d2].iter().any(|&c| c <= 0.0) {
            return Err(KmsError::InvalidParameter("growth constants must be positive".into()));
        }
        if self.c1 > self.c2 || self.d1 > self.d2 {
            return Err(KmsError::InvalidParameter(
                "growth constants must satisfy c1 <= c2 and d1 <= d2".into(),
            ));
        }
        Ok(())
    }

    /// `r + theta + 1`, the integrability exponent of the coupling energy.
    pub fn coupling_exponent(&self) -> f64 {
        self.r + self.theta + 1.0
    }

    pub fn p_star(&self) -> f64 {
        self.n_dim * self.p / (self.n_dim - self.p)
    }
}

/// Sobolev conjugate `N p / (N - p)`.
pub fn sobolev_conjugate(p: f64, n_dim: f64) -> Result<f64> {
    if !(p > 1.0 && p < n_dim) {
        return Err(KmsError::InvalidParameter(format!(
            "Sobolev conjugate needs 1 < p < N, got p = {p}, N = {n_dim}"
        )));
    }
    Ok(n_dim * p / (n_dim - p))
}

/// Hölder conjugate `q / (q - 1)`.
pub fn holder_conjugate(q: f64) -> Result<f64> {
    if !(q > 1.0) || !q.is_finite() {
        return Err(KmsError::InvalidParameter(format!(
            "Hölder conjugate needs q > 1, got {q}"
        )));
    }
    Ok(q / (q - 1.0))
}

/// The pair `(tau*_p, tau**_p)` for a source in `L^tau`.
pub fn regularized_exponents(tau: f64, p: f64, n_dim: f64) -> Result<(f64, f64)> {
    if !(p > 1.0 && p < n_dim) {
        return Err(KmsError::InvalidParameter(format!(
            "need 1 < p < N, got p = {p}, N = {n_dim}"
        )));
    }
    if !(tau >= 1.0 && tau < n_dim / p) {
        return Err(KmsError::InvalidParameter(format!(
            "need 1 <= tau < N/p = {}, got tau = {tau}",
            n_dim / p
        )));
    }
    let num = n_dim * tau * (p - 1.0);
    Ok((num / (n_dim - tau), num / (n_dim - tau * p)))
}

/// One inequality of the existence theorem, evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    /// Printed form of the inequality, e.g. `theta < p-1`.
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Set when `value` is within the threshold tolerance of `threshold`.
    pub near_threshold: bool,
    /// Printed negation, used as the failure reason.
    pub violation: String,
}

impl Condition {
    fn less(name: &str, violation: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            threshold,
            passed: value < threshold,
            near_threshold: near(value, threshold),
            violation: format!("{violation} = {threshold}"),
        }
    }

    fn greater(name: &str, violation: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            threshold,
            passed: value > threshold,
            near_threshold: near(value, threshold),
            violation: format!("{violation} = {threshold}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityVerdict {
    pub conditions: Vec<Condition>,
    pub admissible: bool,
}

impl AdmissibilityVerdict {
    pub fn failures(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.passed)
    }

    /// Human-readable list of violated inequalities, empty when admissible.
    pub fn reasons(&self) -> Vec<String> {
        self.failures().map(|c| c.violation.clone()).collect()
    }
}

/// Evaluates the hypothesis ranges of the existence theorem. Failures are
/// data; this never errors.
pub fn admissibility_check(params: &ProblemParams) -> AdmissibilityVerdict {
    let p_star = params.p_star();
    let lower = (params.coupling_exponent() / (params.coupling_exponent() - 1.0))
        .min(p_star / (p_star - 1.0));
    let p = params.p;
    let n = params.n_dim;
    let conditions = vec![
        Condition::greater(
            "m > min{(r+theta+1)', (p*)'}",
            "m <= min{(r+theta+1)', (p*)'}",
            params.m,
            lower,
        ),
        Condition::less("m < N/p", "m >= N/p", params.m, n / p),
        Condition::less("theta < p-1", "θ ≥ p−1", params.theta, p - 1.0),
        Condition::less("theta < p^2/(N-p)", "θ ≥ p²/(N−p)", params.theta, p * p / (n - p)),
        Condition::greater("r > 1", "r <= 1", params.r, 1.0),
    ];
    let admissible = conditions.iter().all(|c| c.passed);
    AdmissibilityVerdict {
        conditions,
        admissible,
    }
}

/// Exponent of the a priori bound on `||u_k||_{L^{r+theta+1}}`.
///
/// Pure formula; admissibility is the caller's concern.
pub fn sigma_exponent(params: &ProblemParams) -> f64 {
    let m_conj = params.m / (params.m - 1.0);
    let p = params.p;
    // A tie within rounding belongs to the `>=` branch.
    let q = params.coupling_exponent();
    if m_conj >= q || near(m_conj, q) {
        2.0 * p / (2.0 * p - 1.0)
    } else {
        1.0 / (params.r + params.theta)
    }
}

/// Exponent `q` in the truncation threshold `eta > C (k^q + 1)`.
pub fn eta_threshold_exponent(p: f64, r: f64, theta: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(KmsError::InvalidParameter(format!("need p > 1, got {p}")));
    }
    let pm1 = p - 1.0;
    let two_pm1 = 2.0 * p - 1.0;
    let numer = 2.0 * r * two_pm1 + (theta + two_pm1) * pm1;
    Ok(2.0 * r / pm1 + (theta + 1.0) * numer / (pm1 * pm1 * two_pm1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Zone {
    /// `u` gains Sobolev (and hence Lebesgue) regularity.
    SobolevRegularized,
    LebesgueRegularized,
    OutsideRegularizingZone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneReport {
    pub p_star: f64,
    pub m_conj: f64,
    pub coupling_conj: f64,
    pub p_star_conj: f64,
    pub m_star_p: f64,
    pub m_double_star_p: f64,
    /// Upper end `N(r+theta+1) / (N(p-1) + p(r+theta+1))` of the Lebesgue window.
    pub lebesgue_upper: f64,
    pub zone: Zone,
    pub v_sobolev: bool,
    /// Integrability exponent of the source of the second equation.
    pub t_v: f64,
    /// Names of thresholds the parameters sit on (within tolerance).
    pub near_thresholds: Vec<String>,
    pub analytic_dim: f64,
    pub grid_dim: Option<usize>,
}

impl ZoneReport {
    /// Records the computational grid dimension next to the analytic one.
    pub fn on_grid(mut self, d: usize) -> Self {
        self.grid_dim = Some(d);
        self
    }

    /// True when a grid dimension was recorded and differs from `N`.
    pub fn dimension_mismatch(&self) -> bool {
        self.grid_dim
            .map(|d| (d as f64 - self.analytic_dim).abs() > 0.0)
            .unwrap_or(false)
    }
}

/// Classifies `params` into the regularizing zones of `u` and `v`.
pub fn zone_classify(params: &ProblemParams) -> Result<ZoneReport> {
    let verdict = admissibility_check(params);
    if !verdict.admissible {
        return Err(KmsError::Inadmissible(verdict.reasons().join("; ")));
    }
    let n = params.n_dim;
    let p = params.p;
    let m = params.m;
    let big = params.coupling_exponent();
    let p_star = sobolev_conjugate(p, n)?;
    let p_star_conj = holder_conjugate(p_star)?;
    let coupling_conj = holder_conjugate(big)?;
    let m_conj = holder_conjugate(m)?;
    let (m_star_p, m_double_star_p) = regularized_exponents(m, p, n)?;
    let lebesgue_upper = n * big / (n * (p - 1.0) + p * big);
    let t_v = p_star * big / (p_star * params.r + params.theta * big);

    let mut near_thresholds = Vec::new();
    let mut note = |name: &str, value: f64, threshold: f64| {
        if near(value, threshold) {
            near_thresholds.push(name.to_string());
        }
    };
    let rt = params.r + params.theta;
    note("r+theta = p*-1", rt, p_star - 1.0);
    note("m = (r+theta+1)'", m, coupling_conj);
    note("m = (p*)'", m, p_star_conj);
    note("m = N(r+theta+1)/(N(p-1)+p(r+theta+1))", m, lebesgue_upper);

    let strong_coupling = rt > p_star - 1.0;
    let zone = if strong_coupling && coupling_conj < m && m < p_star_conj {
        Zone::SobolevRegularized
    } else if strong_coupling && p_star_conj <= m && m < lebesgue_upper {
        Zone::LebesgueRegularized
    } else {
        Zone::OutsideRegularizingZone
    };

    Ok(ZoneReport {
        p_star,
        m_conj,
        coupling_conj,
        p_star_conj,
        m_star_p,
        m_double_star_p,
        lebesgue_upper,
        zone,
        v_sobolev: strong_coupling,
        t_v,
        near_thresholds,
        analytic_dim: n,
        grid_dim: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn conjugates() {
        assert_relative_eq!(sobolev_conjugate(2.0, 3.0).unwrap(), 6.0);
        assert_relative_eq!(sobolev_conjugate(2.0, 4.0).unwrap(), 4.0);
        assert_relative_eq!(sobolev_conjugate(1.5, 3.0).unwrap(), 3.0);
        assert!(sobolev_conjugate(3.0, 3.0).is_err());
        assert!(sobolev_conjugate(1.0, 3.0).is_err());
        assert_eq!(holder_conjugate(2.0).unwrap(), 2.0);
        assert_relative_eq!(holder_conjugate(6.0).unwrap(), 1.2, max_relative = 1e-12);
        assert_relative_eq!(holder_conjugate(7.5).unwrap(), 15.0 / 13.0, max_relative = 1e-12);
        assert!(holder_conjugate(1.0).is_err());
    }

    #[test]
    fn regularized_pairs() {
        let (a, b) = regularized_exponents(1.0, 2.0, 3.0).unwrap();
        assert_relative_eq!(a, 1.5, max_relative = 1e-12);
        assert_relative_eq!(b, 3.0, max_relative = 1e-12);
        let (a, b) = regularized_exponents(1.2, 2.0, 3.0).unwrap();
        assert_relative_eq!(a, 2.0, max_relative = 1e-12);
        assert_relative_eq!(b, 6.0, max_relative = 1e-12);
        assert!(regularized_exponents(1.5, 2.0, 3.0).is_err());
    }

    #[test]
    fn constructor_rejects_bad_tuples() {
        assert!(ProblemParams::new(2.0, 1.5, 2.0, 0.5, 1.2).is_err());
        assert!(ProblemParams::new(3.0, 3.0, 2.0, 0.5, 1.2).is_err());
        assert!(ProblemParams::new(3.0, 2.0, 1.0, 0.5, 1.2).is_err());
        assert!(ProblemParams::new(3.0, 2.0, 2.0, 0.0, 1.2).is_err());
        assert!(ProblemParams::new(3.0, 2.0, 2.0, 0.5, 1.0).is_err());
        assert!(ProblemParams::with_constants(3.0, 2.0, 2.0, 0.5, 1.2, [2.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn admissibility_reasons() {
        let bad = ProblemParams::new(3.0, 2.0, 6.0, 1.5, 1.18).unwrap();
        let v = admissibility_check(&bad);
        assert!(!v.admissible);
        assert_eq!(v.reasons(), vec!["θ ≥ p−1 = 1".to_string()]);
    }

    #[test]
    fn inadmissible_zone_is_error() {
        let bad = ProblemParams::new(3.0, 2.0, 6.0, 0.5, 1.6).unwrap();
        assert!(matches!(zone_classify(&bad), Err(KmsError::Inadmissible(_))));
    }

    #[test]
    fn threshold_ties_are_named() {
        // m exactly at (p*)' = 1.2 with strong coupling: left-closed Lebesgue window.
        let params = ProblemParams::new(3.0, 2.0, 6.0, 0.5, 1.2).unwrap();
        let z = zone_classify(&params).unwrap();
        assert_eq!(z.zone, Zone::LebesgueRegularized);
        assert!(z.near_thresholds.iter().any(|n| n == "m = (p*)'"));
    }

    #[test]
    fn grid_dimension_flag() {
        let params = ProblemParams::new(3.0, 2.0, 6.0, 0.5, 1.18).unwrap();
        let z = zone_classify(&params).unwrap();
        assert!(!z.clone().on_grid(3).dimension_mismatch());
        assert!(z.on_grid(1).dimension_mismatch());
    }

    fn admissible_params() -> impl Strategy<Value = ProblemParams> {
        (3.0f64..6.0, 0.05f64..0.95, 1.01f64..12.0, 0.01f64..0.99, 0.0f64..1.0).prop_filter_map(
            "admissible",
            |(n, pfrac, r, tfrac, mfrac)| {
                let p = 1.05 + pfrac * (n - 1.1);
                let theta = tfrac * (p - 1.0).min(p * p / (n - p));
                let ps = n * p / (n - p);
                let big = r + theta + 1.0;
                let lo = (big / (big - 1.0)).min(ps / (ps - 1.0));
                let hi = n / p;
                if lo >= hi {
                    return None;
                }
                let m = lo + (0.001 + 0.998 * mfrac) * (hi - lo);
                ProblemParams::new(n, p, r, theta, m).ok()
            },
        )
    }

    proptest! {
        #[test]
        fn conjugate_is_involution(q in 1.0001f64..100.0) {
            let back = holder_conjugate(holder_conjugate(q).unwrap()).unwrap();
            prop_assert!((back - q).abs() <= 1e-12 * q);
        }

        #[test]
        fn threshold_identities(params in admissible_params()) {
            let z = zone_classify(&params).unwrap();
            let below_dual = params.m < z.p_star_conj;
            prop_assert_eq!(below_dual, z.m_star_p < params.p);
            prop_assert_eq!(below_dual, z.m_double_star_p < z.p_star);
            prop_assert_eq!(
                params.m < z.lebesgue_upper,
                z.m_double_star_p < params.coupling_exponent()
            );
            prop_assert_eq!(params.r + params.theta > z.p_star - 1.0, z.t_v < z.p_star_conj);
            prop_assert!(z.m_star_p < z.m_double_star_p);
            prop_assert!(z.p_star > params.p);
            if z.zone == Zone::SobolevRegularized {
                prop_assert!(z.v_sobolev);
            }
        }
    }
}
