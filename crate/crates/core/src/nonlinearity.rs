//! Coupling nonlinearities `g(x, s, t)` and `h(x, s, t)`, truncations, and a
//! sampling verifier for their growth hypotheses.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KmsError, Result};

/// `|s|^a` evaluated as `exp(a ln|s|)`, with `0^a = 0` for `a > 0` and `0^0 = 1`.
#[inline]
pub fn pow_abs(s: f64, a: f64) -> f64 {
    let m = s.abs();
    if m == 0.0 {
        if a > 0.0 {
            0.0
        } else if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        (a * m.ln()).exp()
    }
}

#[inline]
fn sign(s: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else if s < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Spatial weight `V(x)`.
pub type Weight = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// User-supplied `(x, s, t) -> value`. Must be stateless or internally
/// synchronized: evaluation happens from several threads.
pub type Evaluator = Arc<dyn Fn(&[f64], f64, f64) -> f64 + Send + Sync>;

/// Constants the nonlinearity claims to satisfy in the growth hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
}

impl GrowthConstants {
    pub const UNIT: Self = Self {
        c1: 1.0,
        c2: 1.0,
        d1: 1.0,
        d2: 1.0,
    };
}

#[derive(Clone)]
pub enum Variant {
    /// `g = s|s|^{r-2}|t|^{theta+1}`, `h = t|s|^r|t|^{theta-1}`.
    Prototype,
    /// Prototype modulated by `V1 (cos(pi s) + pi)` and `V2 (sin(pi t) + pi)`.
    WeightedOscillatory {
        v1: Weight,
        v2: Weight,
        e1: f64,
        e2: f64,
        v1_max: f64,
        v2_max: f64,
    },
    Custom {
        g: Evaluator,
        h: Evaluator,
        /// Optional `dg/ds`, used by Newton when present.
        g_ds: Option<Evaluator>,
        /// Optional `int_0^s g`, enables energy line searches.
        primitive: Option<Evaluator>,
    },
}

/// A coupling pair `(g, h)` together with the exponents `r`, `theta` of the
/// growth hypotheses and the constants it claims.
#[derive(Clone)]
pub struct NonlinearitySpec {
    pub r: f64,
    pub theta: f64,
    pub variant: Variant,
    pub constants: GrowthConstants,
    pub label: String,
}

impl fmt::Debug for NonlinearitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearitySpec")
            .field("label", &self.label)
            .field("r", &self.r)
            .field("theta", &self.theta)
            .field("constants", &self.constants)
            .finish()
    }
}

fn check_exponents(r: f64, theta: f64) -> Result<()> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(KmsError::InvalidParameter(format!("r = {r} must exceed 1")));
    }
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(KmsError::InvalidParameter(format!("theta = {theta} must be positive")));
    }
    Ok(())
}

/// Deterministic probe points in `[0,1]^d`, `d = 1, 2, 3`.
fn weight_probe_points() -> Vec<Vec<f64>> {
    let mut pts = Vec::new();
    let n = 9;
    for i in 0..n {
        let a = i as f64 / (n - 1) as f64;
        pts.push(vec![a]);
        for j in 0..n {
            let b = j as f64 / (n - 1) as f64;
            pts.push(vec![a, b]);
            for k in 0..n {
                pts.push(vec![a, b, k as f64 / (n - 1) as f64]);
            }
        }
    }
    pts
}

impl NonlinearitySpec {
    pub fn prototype(r: f64, theta: f64) -> Result<Self> {
        check_exponents(r, theta)?;
        Ok(Self {
            r,
            theta,
            variant: Variant::Prototype,
            constants: GrowthConstants::UNIT,
            label: "prototype".into(),
        })
    }

    /// Oscillatory example with weights bounded as `e_i <= V_i <= v_i_max`.
    /// The bounds are checked on a lattice of sample points.
    #[allow(clippy::too_many_arguments)]
    pub fn weighted_oscillatory(
        r: f64,
        theta: f64,
        v1: Weight,
        v2: Weight,
        e1: f64,
        e2: f64,
        v1_max: f64,
        v2_max: f64,
    ) -> Result<Self> {
        check_exponents(r, theta)?;
        if !(e1 > 0.0 && e2 > 0.0) || v1_max < e1 || v2_max < e2 {
            return Err(KmsError::InvalidParameter(
                "weights need 0 < e_i <= V_i <= V_i,max".into(),
            ));
        }
        for x in weight_probe_points() {
            let (a, b) = (v1(&x), v2(&x));
            if !(a >= e1 && a <= v1_max && b >= e2 && b <= v2_max) {
                return Err(KmsError::InvalidParameter(format!(
                    "weight bound violated at x = {x:?}: V1 = {a}, V2 = {b}"
                )));
            }
        }
        let constants = GrowthConstants {
            c1: e1 * (PI - 1.0),
            c2: v1_max * (PI + 1.0),
            d1: e2 * (PI - 1.0),
            d2: v2_max * (PI + 1.0),
        };
        Ok(Self {
            r,
            theta,
            variant: Variant::WeightedOscillatory {
                v1,
                v2,
                e1,
                e2,
                v1_max,
                v2_max,
            },
            constants,
            label: "weighted_oscillatory".into(),
        })
    }

    /// Oscillatory example with constant weights `V1 = w1`, `V2 = w2`.
    pub fn oscillatory_constant(r: f64, theta: f64, w1: f64, w2: f64) -> Result<Self> {
        Self::weighted_oscillatory(
            r,
            theta,
            Arc::new(move |_| w1),
            Arc::new(move |_| w2),
            w1,
            w2,
            w1,
            w2,
        )
    }

    /// Arbitrary evaluators with declared constants. The constants are
    /// verified by [`verify_growth_bounds`], never inferred.
    pub fn custom(
        r: f64,
        theta: f64,
        g: Evaluator,
        h: Evaluator,
        constants: GrowthConstants,
    ) -> Result<Self> {
        check_exponents(r, theta)?;
        let c = [constants.c1, constants.c2, constants.d1, constants.d2];
        if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(KmsError::InvalidParameter("claimed constants must be >= 0".into()));
        }
        Ok(Self {
            r,
            theta,
            variant: Variant::Custom {
                g,
                h,
                g_ds: None,
                primitive: None,
            },
            constants,
            label: "custom".into(),
        })
    }

    /// Attaches an analytic `dg/ds` to a custom spec.
    pub fn with_g_derivative(mut self, ds: Evaluator) -> Self {
        if let Variant::Custom { g_ds, .. } = &mut self.variant {
            *g_ds = Some(ds);
        }
        self
    }

    /// Attaches a closed-form primitive in `s` to a custom spec.
    pub fn with_primitive(mut self, prim: Evaluator) -> Self {
        if let Variant::Custom { primitive, .. } = &mut self.variant {
            *primitive = Some(prim);
        }
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `g = h = 0`: the decoupled control. Claims zero constants.
    pub fn zero_coupling(r: f64, theta: f64) -> Result<Self> {
        let zero: Evaluator = Arc::new(|_, _, _| 0.0);
        let spec = Self::custom(
            r,
            theta,
            zero.clone(),
            zero.clone(),
            GrowthConstants {
                c1: 0.0,
                c2: 0.0,
                d1: 0.0,
                d2: 0.0,
            },
        )?;
        Ok(spec
            .with_g_derivative(zero.clone())
            .with_primitive(zero)
            .with_label("zero_coupling"))
    }

    /// `|s|^{r-1}|t|^{theta+1}`, the common magnitude of the `g` bounds.
    #[inline]
    fn g_base(&self, s: f64, t: f64) -> f64 {
        pow_abs(s, self.r - 1.0) * pow_abs(t, self.theta + 1.0)
    }

    /// `|s|^r|t|^theta`, the common magnitude of the `h` bounds.
    #[inline]
    fn h_base(&self, s: f64, t: f64) -> f64 {
        pow_abs(s, self.r) * pow_abs(t, self.theta)
    }

    pub fn g_eval(&self, x: &[f64], s: f64, t: f64) -> f64 {
        match &self.variant {
            Variant::Prototype => sign(s) * self.g_base(s, t),
            Variant::WeightedOscillatory { v1, .. } => {
                v1(x) * sign(s) * self.g_base(s, t) * ((PI * s).cos() + PI)
            }
            Variant::Custom { g, .. } => g(x, s, t),
        }
    }

    /// `h`, extended continuously by 0 at `t = 0`.
    pub fn h_eval(&self, x: &[f64], s: f64, t: f64) -> f64 {
        match &self.variant {
            Variant::Prototype => sign(t) * self.h_base(s, t),
            Variant::WeightedOscillatory { v2, .. } => {
                v2(x) * sign(t) * self.h_base(s, t) * ((PI * t).sin() + PI)
            }
            Variant::Custom { h, .. } => h(x, s, t),
        }
    }

    /// `dg/ds` where `g` is C^1 in `s` at this point, `None` otherwise (the
    /// solver then lags the reaction).
    pub fn g_ds(&self, x: &[f64], s: f64, t: f64) -> Option<f64> {
        let r = self.r;
        match &self.variant {
            Variant::Prototype if r >= 2.0 => {
                Some((r - 1.0) * pow_abs(s, r - 2.0) * pow_abs(t, self.theta + 1.0))
            }
            Variant::WeightedOscillatory { v1, .. } if r >= 2.0 => {
                let tt = pow_abs(t, self.theta + 1.0);
                let a = (r - 1.0) * pow_abs(s, r - 2.0) * ((PI * s).cos() + PI);
                let b = PI * sign(s) * pow_abs(s, r - 1.0) * (PI * s).sin();
                Some(v1(x) * tt * (a - b))
            }
            Variant::Custom { g_ds: Some(d), .. } => Some(d(x, s, t)),
            _ => None,
        }
    }

    /// `G(x, s, t) = int_0^s g(x, sigma, t) d sigma`. Available for the
    /// prototype and for custom specs that supply it.
    pub fn primitive_in_s(&self, x: &[f64], s: f64, t: f64) -> Result<f64> {
        match &self.variant {
            Variant::Prototype => Ok(pow_abs(s, self.r) / self.r * pow_abs(t, self.theta + 1.0)),
            Variant::Custom {
                primitive: Some(prim),
                ..
            } => Ok(prim(x, s, t)),
            _ => Err(KmsError::NonVariational),
        }
    }

    pub fn is_variational(&self) -> bool {
        match &self.variant {
            Variant::Prototype => true,
            Variant::Custom { primitive, .. } => primitive.is_some(),
            Variant::WeightedOscillatory { .. } => false,
        }
    }
}

/// Truncation level `eta > 0` for `T_eta(s) = min{eta, max{-eta, s}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationLevel(f64);

impl TruncationLevel {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(KmsError::InvalidParameter(format!("truncation level {eta} must be > 0")));
        }
        Ok(Self(eta))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `T_eta(s)`.
#[inline]
pub fn truncate(eta: TruncationLevel, value: f64) -> f64 {
    value.clamp(-eta.0, eta.0)
}

/// `G_n(s) = s - T_n(s)`.
#[inline]
pub fn tail_part(n: TruncationLevel, value: f64) -> f64 {
    value - truncate(n, value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub s: f64,
    pub t: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResult {
    /// `H1` .. `H4`.
    pub name: String,
    pub statement: String,
    pub claimed: f64,
    /// Minimum observed ratio for lower bounds, maximum for upper bounds.
    pub worst_ratio: f64,
    pub passed: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub label: String,
    pub r: f64,
    pub theta: f64,
    pub n_samples: usize,
    pub hypotheses: Vec<HypothesisResult>,
    pub all_passed: bool,
}

/// Relative tolerance for the hypothesis verifier.
pub const GROWTH_TOL: f64 = 1e-10;

fn sample_value<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.gen_ratio(1, 64) {
        return 0.0;
    }
    let mag = 10f64.powf(rng.gen_range(-3.0..3.0));
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

struct Tracker {
    lower: bool,
    worst: f64,
    witness: Option<Witness>,
}

impl Tracker {
    fn new(lower: bool) -> Self {
        Self {
            lower,
            worst: if lower { f64::INFINITY } else { f64::NEG_INFINITY },
            witness: None,
        }
    }

    fn observe(&mut self, x: &[f64], s: f64, t: f64, num: f64, denom: f64) {
        let ratio = if denom > 0.0 {
            num / denom
        } else if self.lower && num < 0.0 {
            f64::NEG_INFINITY
        } else if !self.lower && num > 0.0 {
            f64::INFINITY
        } else {
            return;
        };
        let worse = if self.lower { ratio < self.worst } else { ratio > self.worst };
        if worse || ratio.is_nan() {
            self.worst = ratio;
            self.witness = Some(Witness {
                x: x.to_vec(),
                s,
                t,
                ratio,
            });
        }
    }

    fn finish(self, name: &str, statement: &str, claimed: f64) -> HypothesisResult {
        let passed = if self.witness.is_none() {
            true
        } else if self.lower {
            self.worst >= claimed * (1.0 - GROWTH_TOL)
        } else {
            self.worst <= claimed * (1.0 + GROWTH_TOL)
        };
        HypothesisResult {
            name: name.into(),
            statement: statement.into(),
            claimed,
            worst_ratio: self.worst,
            passed,
            witness: if passed { None } else { self.witness },
        }
    }
}

/// Samples `(x, s, t)` and checks the four growth hypotheses against the
/// constants claimed by `spec`. `s` and `t` take both signs over six decades
/// (with occasional exact zeros); `x` is uniform in `[0,1]^dim`.
pub fn verify_growth_bounds<R: Rng + ?Sized>(
    spec: &NonlinearitySpec,
    rng: &mut R,
    dim: usize,
    n_samples: usize,
) -> HypothesisReport {
    let mut h1 = Tracker::new(true);
    let mut h2 = Tracker::new(false);
    let mut h3 = Tracker::new(true);
    let mut h4 = Tracker::new(false);
    let mut x = vec![0.0; dim.max(1)];
    for _ in 0..n_samples.max(1) {
        for xi in x.iter_mut() {
            *xi = rng.gen::<f64>();
        }
        let s = sample_value(rng);
        let t = sample_value(rng);
        let g = spec.g_eval(&x, s, t);
        let h = spec.h_eval(&x, s, t);
        let gb = spec.g_base(s, t);
        let hb = spec.h_base(s, t);
        h1.observe(&x, s, t, g * s, gb * s.abs());
        h2.observe(&x, s, t, g.abs(), gb);
        h3.observe(&x, s, t, h * t, hb * t.abs());
        h4.observe(&x, s, t, h.abs(), hb);
    }
    let c = spec.constants;
    let hypotheses = vec![
        h1.finish("H1", "c1 |s|^r |t|^(theta+1) <= g(x,s,t) s", c.c1),
        h2.finish("H2", "|g(x,s,t)| <= c2 |s|^(r-1) |t|^(theta+1)", c.c2),
        h3.finish("H3", "d1 |s|^r |t|^(theta+1) <= h(x,s,t) t", c.d1),
        h4.finish("H4", "|h(x,s,t)| <= d2 |s|^r |t|^theta", c.d2),
    ];
    let all_passed = hypotheses.iter().all(|h| h.passed);
    HypothesisReport {
        label: spec.label.clone(),
        r: spec.r,
        theta: spec.theta,
        n_samples: n_samples.max(1),
        hypotheses,
        all_passed,
    }
}
