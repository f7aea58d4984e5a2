//! Discrete solutions of the truncated coupled system
//!
//! ```text
//! -div(A |grad u|^{p-2} grad u) + g(x,u,v) = T_k(f)
//! -div(A |grad v|^{p-2} grad v) = h(x,u,v) + 1/k
//! A = 1/k + ||grad u||_p^p + ||grad v||_p^p
//! ```
//!
//! The outer loop alternates between the two equations with the scalar
//! coefficient frozen. Between sweeps the coefficient is relaxed in log space
//! while far from its fixed point and by Aitken-adjusted linear relaxation
//! near it. Each scalar equation is solved by damped Newton with continuation
//! in the flux regularization.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::discretization::{
    diffusion_action, dual_norm_of, gradient_p_energy, hat_norms, nonlocal_coefficient, pairwise_sum,
    weak_residual, w1p_seminorm, Equation, Field, Grid,
};
use crate::error::{KmsError, Result};
use crate::exponents::ProblemParams;
use crate::linalg::{solve_spd, SymMatrix};
use crate::nonlinearity::NonlinearitySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    /// Regularization level; `f64::INFINITY` drops the `1/k` terms.
    pub k: f64,
    /// Strictly decreasing flux regularizations; the last one is the target.
    pub eps_schedule: Vec<f64>,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub relax: f64,
    /// Threshold for the positivity diagnostics.
    pub positivity_tol: f64,
}

impl SolveConfig {
    /// Defaults for exponent `p`: no regularization at `p = 2`, otherwise a
    /// continuation down to `1e-8`.
    pub fn new(k: f64, p: f64) -> Self {
        Self {
            k,
            eps_schedule: Self::default_schedule(p),
            outer_tol: 1e-8,
            inner_tol: 1e-10,
            max_outer: 200,
            max_inner: 60,
            relax: 0.5,
            positivity_tol: 1e-10,
        }
    }

    pub fn default_schedule(p: f64) -> Vec<f64> {
        if p == 2.0 {
            vec![0.0]
        } else {
            vec![1e-1, 1e-2, 1e-4, 1e-6, 1e-8]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KmsError::InvalidParameter(m.to_string()));
        if !(self.k > 0.0) {
            return bad("k must be positive");
        }
        if !(self.outer_tol > 0.0 && self.inner_tol > 0.0 && self.positivity_tol >= 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.relax > 0.0 && self.relax <= 1.0) {
            return bad("relax must lie in (0, 1]");
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration caps must be at least 1");
        }
        if self.eps_schedule.is_empty() || self.eps_schedule.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return bad("eps schedule must be a nonempty list of finite values >= 0");
        }
        if self.eps_schedule.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("eps schedule must be strictly decreasing");
        }
        Ok(())
    }

    fn target_eps(&self) -> f64 {
        *self.eps_schedule.last().expect("validated")
    }
}

/// Outcome of one scalar solve.
#[derive(Debug, Clone)]
pub struct InnerSolve {
    pub field: Field,
    pub converged: bool,
    /// Dual norm of the final weak residual at the target regularization.
    pub residual: f64,
    pub newton_steps: usize,
    /// Discrete energy after every accepted step, one list per regularization
    /// stage; empty when the frozen equation has no energy.
    pub energy_trace: Vec<Vec<f64>>,
}

impl InnerSolve {
    pub fn into_result(self) -> Result<Field> {
        if self.converged {
            Ok(self.field)
        } else {
            Err(KmsError::MaxIterations {
                iterations: self.newton_steps,
                residual: self.residual,
            })
        }
    }
}

/// Nodal reaction: value and a nonnegative linearization at each node.
type Reaction<'a> = dyn Fn(usize, f64) -> (f64, f64) + 'a;
type Primitive<'a> = dyn Fn(usize, f64) -> f64 + 'a;

/// `a K_eps(w) + M reaction(w) - M source` with Dirichlet unknowns removed.
struct ScalarProblem<'a> {
    grid: &'a Arc<Grid>,
    a: f64,
    p: f64,
    source: &'a [f64],
    reaction: &'a Reaction<'a>,
    primitive: Option<&'a Primitive<'a>>,
    hats: &'a [f64],
}

struct NewtonStage {
    converged: bool,
    residual: f64,
    steps: usize,
    energy: Vec<f64>,
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KmsError::NonfiniteValue(what.to_string()))
    }
}

impl ScalarProblem<'_> {
    fn field(&self, w: &[f64]) -> Field {
        Field::from_values(self.grid, w.to_vec()).expect("iterates keep the boundary at zero")
    }

    fn residual(&self, w: &[f64], eps: f64) -> Vec<f64> {
        let mut r = diffusion_action(&self.field(w), self.a, self.p, eps);
        let mass = self.grid.lumped_mass();
        for (i, ri) in r.iter_mut().enumerate() {
            if self.grid.boundary_mask()[i] {
                *ri = 0.0;
            } else {
                *ri += mass[i] * ((self.reaction)(i, w[i]).0 - self.source[i]);
            }
        }
        r
    }

    fn energy(&self, w: &[f64], eps: f64) -> Option<f64> {
        let prim = self.primitive?;
        let grid = self.grid;
        let d = grid.dim();
        let vol = grid.element_volume();
        let mut g = [0.0; 3];
        let p = self.p;
        let terms: Vec<f64> = grid
            .elements()
            .iter()
            .map(|e| {
                grid.element_gradient(e, w, &mut g);
                let s: f64 = g[..d].iter().map(|c| c * c).sum::<f64>() + eps * eps;
                vol * s.powf(p / 2.0) / p
            })
            .collect();
        let mass = grid.lumped_mass();
        let nodal: Vec<f64> = grid
            .interior_nodes()
            .iter()
            .map(|&i| mass[i] * (prim(i, w[i]) - self.source[i] * w[i]))
            .collect();
        Some(self.a * pairwise_sum(&terms) + pairwise_sum(&nodal))
    }

    fn jacobian(&self, w: &[f64], eps: f64) -> SymMatrix {
        let grid = self.grid;
        let pattern = grid.pattern();
        let mut m = SymMatrix::zeros(pattern.clone());
        let d = grid.dim();
        let l = d + 1;
        let vol = grid.element_volume();
        let p = self.p;
        let mut g = [0.0; 3];
        let mut b = [[0.0f64; 3]; 4];
        for (ei, e) in grid.elements().iter().enumerate() {
            grid.element_gradient(e, w, &mut g);
            let (c1, c2) = if p == 2.0 {
                (1.0, 0.0)
            } else {
                let s = (g[..d].iter().map(|c| c * c).sum::<f64>() + eps * eps).max(1e-24);
                (s.powf(0.5 * (p - 2.0)), (p - 2.0) * s.powf(0.5 * (p - 4.0)))
            };
            for (j, bj) in b.iter_mut().enumerate().take(l) {
                *bj = [0.0; 3];
                for (axis, c) in grid.hat_gradient(e, j) {
                    bj[axis] += c;
                }
            }
            let pos = pattern.element_positions(ei);
            let scale = self.a * vol;
            let vals = m.values_mut();
            for i in 0..l {
                let bi_g: f64 = (0..d).map(|q| b[i][q] * g[q]).sum();
                for j in 0..l {
                    let k = pos[i * l + j];
                    if k == usize::MAX {
                        continue;
                    }
                    let bj_g: f64 = (0..d).map(|q| b[j][q] * g[q]).sum();
                    let bi_bj: f64 = (0..d).map(|q| b[i][q] * b[j][q]).sum();
                    vals[k] += scale * (c1 * bi_bj + c2 * bi_g * bj_g);
                }
            }
        }
        let mass = grid.lumped_mass();
        for (row, &node) in grid.interior_nodes().iter().enumerate() {
            let dr = (self.reaction)(node, w[node]).1;
            m.add_diagonal(row, mass[node] * dr);
        }
        m
    }

    fn dual(&self, r: &[f64]) -> f64 {
        dual_norm_of(self.grid, r, self.hats)
    }

    fn newton(&self, w: &mut [f64], eps: f64, tol: f64, min_steps: usize, max_iter: usize) -> Result<NewtonStage> {
        let interior = self.grid.interior_nodes();
        let mut r = self.residual(w, eps);
        check_finite(&r, "residual")?;
        let mut res = self.dual(&r);
        let mut energy = self.energy(w, eps);
        let mut trace: Vec<f64> = energy.into_iter().collect();
        let mut steps = 0;
        while (res > tol || steps < min_steps) && steps < max_iter {
            let jac = self.jacobian(w, eps);
            let rhs: Vec<f64> = interior.iter().map(|&i| -r[i]).collect();
            let delta = solve_spd(&jac, &rhs)?;
            check_finite(&delta, "Newton step")?;
            let slope: f64 = interior.iter().zip(&delta).map(|(&i, d)| r[i] * d).sum();
            let r2: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();

            // Energy Armijo only while the decrease is resolvable in floating point.
            let use_energy = energy.is_some_and(|e| slope < 0.0 && -slope > 1e-12 * e.abs().max(1e-300));
            let mut alpha = 1.0;
            let mut trial = w.to_vec();
            let mut accepted = None;
            for _ in 0..40 {
                for (&i, d) in interior.iter().zip(&delta) {
                    trial[i] = w[i] + alpha * d;
                }
                let rt = self.residual(&trial, eps);
                if rt.iter().all(|v| v.is_finite()) {
                    let ok = if use_energy {
                        let et = self.energy(&trial, eps).expect("energy available");
                        et.is_finite() && et <= energy.unwrap() + 1e-4 * alpha * slope
                    } else {
                        let n2 = rt.iter().map(|v| v * v).sum::<f64>().sqrt();
                        n2 <= (1.0 - 1e-4 * alpha) * r2
                    };
                    if ok {
                        accepted = Some(rt);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            steps += 1;
            let Some(rt) = accepted else {
                break;
            };
            w.copy_from_slice(&trial);
            r = rt;
            res = self.dual(&r);
            if self.primitive.is_some() {
                energy = self.energy(w, eps);
                trace.extend(energy);
            }
        }
        Ok(NewtonStage {
            converged: res <= tol,
            residual: res,
            steps,
            energy: trace,
        })
    }
}

fn node_coords(grid: &Grid) -> Vec<Vec<f64>> {
    (0..grid.num_nodes()).map(|i| grid.node_coords(i)).collect()
}

fn secant_slope(value: f64, s: f64) -> f64 {
    if s != 0.0 {
        (value / s).max(0.0)
    } else {
        0.0
    }
}

/// Intermediate regularization stages only warm-start the next one.
fn stage_tol(final_tol: f64, last: bool) -> f64 {
    if last {
        final_tol
    } else {
        final_tol.max(1e-6)
    }
}

/// Solves one equation of the system with the coefficient `a` and the other
/// unknown (`partner`) frozen.
///
/// * `Equation::First`: `-div(a flux(grad u)) + g(x,u,partner) = source`;
///   the caller supplies the truncated datum as `source`.
/// * `Equation::Second`: `-div(a flux(grad v)) = h(x,partner,v) + source`;
///   the caller supplies the constant `1/k` as `source`. The coupling term is
///   lagged (Picard) and each lagged problem is solved by Newton.
#[allow(clippy::too_many_arguments)]
pub fn inner_scalar_solve(
    a: f64,
    partner: &Field,
    which: Equation,
    source: &Field,
    spec: &NonlinearitySpec,
    p: f64,
    config: &SolveConfig,
    initial: Option<&Field>,
) -> Result<InnerSolve> {
    config.validate()?;
    if !(a > 0.0) || !a.is_finite() {
        return Err(KmsError::InvalidParameter(format!("coefficient A = {a} must be positive")));
    }
    partner.check_grid(source)?;
    let grid = partner.grid();
    let mut w = match initial {
        Some(f) => {
            f.check_grid(partner)?;
            f.values().to_vec()
        }
        None => vec![0.0; grid.num_nodes()],
    };
    let coords = node_coords(grid);
    let pv = partner.values();
    let hats = hat_norms(grid, p);
    let n_eps = config.eps_schedule.len();
    let mut steps = 0;
    let mut energy_trace = Vec::new();
    let mut converged = false;
    let mut residual = f64::INFINITY;
    // A warm start from a nearby coefficient can already sit below the
    // tolerance; one forced step keeps the outer map from stalling.
    let forced = |last: bool| usize::from(last && initial.is_some());

    match which {
        Equation::First => {
            let reaction = |i: usize, s: f64| {
                let (x, t) = (&coords[i], pv[i]);
                let val = spec.g_eval(x, s, t);
                let ds = match spec.g_ds(x, s, t) {
                    Some(d) if d.is_finite() && d >= 0.0 => d,
                    _ => secant_slope(val, s),
                };
                (val, ds)
            };
            let prim = |i: usize, s: f64| spec.primitive_in_s(&coords[i], s, pv[i]).unwrap_or(f64::NAN);
            let problem = ScalarProblem {
                grid,
                a,
                p,
                source: source.values(),
                reaction: &reaction,
                primitive: if spec.is_variational() { Some(&prim) } else { None },
                hats: &hats,
            };
            for (si, &eps) in config.eps_schedule.iter().enumerate() {
                let last = si + 1 == n_eps;
                let stage = problem.newton(&mut w, eps, stage_tol(config.inner_tol, last), forced(last), config.max_inner)?;
                steps += stage.steps;
                energy_trace.push(stage.energy);
                converged = stage.converged;
                residual = stage.residual;
            }
        }
        Equation::Second => {
            let no_reaction = |_: usize, _: f64| (0.0, 0.0);
            let zero_prim = |_: usize, _: f64| 0.0;
            let mut lagged = vec![0.0; grid.num_nodes()];
            for (si, &eps) in config.eps_schedule.iter().enumerate() {
                let last = si + 1 == n_eps;
                let tol = stage_tol(config.inner_tol, last);
                let full = |w: &[f64]| -> Vec<f64> {
                    let wf = Field::from_values(grid, w.to_vec()).expect("boundary kept at zero");
                    let mut r = diffusion_action(&wf, a, p, eps);
                    let mass = grid.lumped_mass();
                    for (i, ri) in r.iter_mut().enumerate() {
                        if grid.boundary_mask()[i] {
                            *ri = 0.0;
                        } else {
                            *ri -= mass[i] * (spec.h_eval(&coords[i], pv[i], w[i]) + source.values()[i]);
                        }
                    }
                    r
                };
                let mut picard = 0;
                loop {
                    let r = full(&w);
                    check_finite(&r, "residual")?;
                    residual = dual_norm_of(grid, &r, &hats);
                    converged = residual <= tol;
                    if (converged && picard >= forced(last)) || picard >= config.max_inner {
                        break;
                    }
                    for &i in grid.interior_nodes() {
                        lagged[i] = spec.h_eval(&coords[i], pv[i], w[i]) + source.values()[i];
                    }
                    let problem = ScalarProblem {
                        grid,
                        a,
                        p,
                        source: &lagged,
                        reaction: &no_reaction,
                        primitive: Some(&zero_prim),
                        hats: &hats,
                    };
                    let stage = problem.newton(&mut w, eps, 0.1 * tol, forced(last), config.max_inner)?;
                    steps += stage.steps;
                    picard += 1;
                }
            }
        }
    }
    check_finite(&w, "solution")?;
    Ok(InnerSolve {
        field: Field::from_values(grid, w)?,
        converged,
        residual,
        newton_steps: steps,
        energy_trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuterRecord {
    pub iteration: usize,
    /// Frozen coefficient used in this sweep.
    pub a_used: f64,
    /// Coefficient recomputed from the new iterates.
    pub a_new: f64,
    pub residual_first: f64,
    pub residual_second: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxOuterIterations,
    /// The coefficient cycles instead of contracting; reduce `relax`.
    OscillationDetected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Positivity {
    pub min_u: f64,
    pub min_v: f64,
    pub u_nonnegative: bool,
    pub v_positive: bool,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: Field,
    pub v: Field,
    pub a_k: f64,
    pub history: Vec<OuterRecord>,
    pub status: SolveStatus,
    pub converged: bool,
    pub outer_iterations: usize,
    pub newton_steps: usize,
    /// Coefficient below `10/k`: the limit coefficient may vanish.
    pub possibly_degenerate: bool,
    pub positivity: Positivity,
    pub residual_first: f64,
    pub residual_second: f64,
    pub p: f64,
    pub config: SolveConfig,
}

impl SolveResult {
    /// Config echo, per-iteration records and convergence flags.
    pub fn history_json(&self) -> serde_json::Value {
        json!({
            "config": self.config,
            "p": self.p,
            "records": self.history,
            "status": self.status,
            "converged": self.converged,
            "a_k": self.a_k,
            "outer_iterations": self.outer_iterations,
            "newton_steps": self.newton_steps,
            "possibly_degenerate": self.possibly_degenerate,
            "positivity": self.positivity,
            "residual_first": self.residual_first,
            "residual_second": self.residual_second,
        })
    }
}

const OSCILLATION_WINDOW: usize = 8;

fn oscillating(history: &[OuterRecord]) -> bool {
    if history.len() < OSCILLATION_WINDOW {
        return false;
    }
    let w = &history[history.len() - OSCILLATION_WINDOW..];
    let d: Vec<f64> = w.iter().map(|r| r.a_new - r.a_used).collect();
    let alternating = d.windows(2).all(|p| p[0] * p[1] < 0.0);
    alternating && d[d.len() - 1].abs() >= 0.95 * d[0].abs()
}

/// Alternating solve of the coupled system from `u = v = 0`.
pub fn picard_system_solve(f: &Field, spec: &NonlinearitySpec, p: f64, config: &SolveConfig) -> Result<SolveResult> {
    picard_system_solve_from(f, spec, p, config, None)
}

/// As [`picard_system_solve`], optionally warm-started from `(u, v, A)`.
pub fn picard_system_solve_from(
    f: &Field,
    spec: &NonlinearitySpec,
    p: f64,
    config: &SolveConfig,
    start: Option<(&Field, &Field, f64)>,
) -> Result<SolveResult> {
    config.validate()?;
    if !(p > 1.0) {
        return Err(KmsError::InvalidParameter(format!("p = {p} must exceed 1")));
    }
    let grid = f.grid().clone();
    let k = config.k;
    let fk = f.truncated(k)?;
    let inv_k = Field::from_fn(&grid, |_| 1.0 / k);
    let (mut u, mut v) = match start {
        Some((u0, v0, _)) => {
            u0.check_grid(f)?;
            v0.check_grid(f)?;
            (u0.clone(), v0.clone())
        }
        None => (Field::zeros(&grid), Field::zeros(&grid)),
    };
    let mut a = match start {
        Some((_, _, a0)) if a0 >= 1.0 / k => a0,
        _ => nonlocal_coefficient(&u, &v, p, k)?,
    };
    let eps = config.target_eps();
    let hats = hat_norms(&grid, p);
    let mut history = Vec::new();
    let mut status = SolveStatus::MaxOuterIterations;
    let mut newton_steps = 0;
    let (mut res1, mut res2) = (f64::INFINITY, f64::INFINITY);
    let mut a_final = a;
    let mut omega = config.relax;
    let mut prev_increment: Option<f64> = None;

    for j in 0..config.max_outer {
        let s1 = inner_scalar_solve(a, &v, Equation::First, &fk, spec, p, config, Some(&u))?;
        newton_steps += s1.newton_steps;
        u = s1.field;
        let s2 = inner_scalar_solve(a, &u, Equation::Second, &inv_k, spec, p, config, Some(&v))?;
        newton_steps += s2.newton_steps;
        v = s2.field;

        let a_new = nonlocal_coefficient(&u, &v, p, k)?;
        if !a_new.is_finite() {
            return Err(KmsError::NonfiniteValue("nonlocal coefficient".into()));
        }
        res1 = dual_norm_of(&grid, &weak_residual(&u, &v, f, spec, p, Equation::First, k, eps)?, &hats);
        res2 = dual_norm_of(&grid, &weak_residual(&u, &v, f, spec, p, Equation::Second, k, eps)?, &hats);
        history.push(OuterRecord {
            iteration: j,
            a_used: a,
            a_new,
            residual_first: res1,
            residual_second: res2,
            min_u: u.interior_min(),
            min_v: v.interior_min(),
            newton_steps: s1.newton_steps + s2.newton_steps,
        });
        a_final = a_new;
        if (a_new - a).abs() / a <= config.outer_tol && res1 <= config.outer_tol && res2 <= config.outer_tol {
            status = SolveStatus::Converged;
            break;
        }
        if oscillating(&history) {
            status = SolveStatus::OscillationDetected;
            break;
        }
        // Far from the fixed point A can be off by many orders of magnitude,
        // so relax in log space. Near it, Aitken-update the relaxation factor.
        let increment = a_new - a;
        if (increment / a).abs() >= 0.1 {
            omega = config.relax;
            prev_increment = None;
            a = a.powf(1.0 - omega) * a_new.powf(omega);
            continue;
        }
        if let Some(prev) = prev_increment {
            if increment != prev {
                omega = (-omega * prev / (increment - prev)).clamp(0.05, 1.0);
            }
        }
        prev_increment = Some(increment);
        a = (1.0 - omega) * a + omega * a_new;
    }

    let (min_u, min_v) = (u.interior_min(), v.interior_min());
    Ok(SolveResult {
        positivity: Positivity {
            min_u,
            min_v,
            u_nonnegative: min_u >= -config.positivity_tol,
            v_positive: min_v > 0.0,
        },
        possibly_degenerate: a_final < 10.0 / k,
        converged: status == SolveStatus::Converged,
        outer_iterations: history.len(),
        u,
        v,
        a_k: a_final,
        history,
        status,
        newton_steps,
        residual_first: res1,
        residual_second: res2,
        p,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CauchyStep {
    pub k_from: f64,
    pub k_to: f64,
    /// `||grad(u_{k_from} - u_{k_to})||_{L^p}`.
    pub du: f64,
    pub dv: f64,
}

#[derive(Debug, Clone)]
pub struct Continuation {
    pub results: Vec<SolveResult>,
    pub cauchy: Vec<CauchyStep>,
    pub a_trajectory: Vec<f64>,
    /// First stage error, if the schedule stopped early.
    pub error: Option<KmsError>,
}

impl Continuation {
    /// Both Cauchy sequences strictly decrease.
    pub fn cauchy_decreasing(&self) -> bool {
        self.cauchy.windows(2).all(|w| w[1].du < w[0].du && w[1].dv < w[0].dv)
    }
}

/// Solves along an increasing list of levels, warm-starting each stage.
pub fn k_continuation(
    f: &Field,
    spec: &NonlinearitySpec,
    p: f64,
    k_schedule: &[f64],
    config: &SolveConfig,
) -> Result<Continuation> {
    if k_schedule.is_empty() || k_schedule.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(KmsError::InvalidParameter("k schedule must be nonempty and strictly increasing".into()));
    }
    let mut out = Continuation {
        results: Vec::new(),
        cauchy: Vec::new(),
        a_trajectory: Vec::new(),
        error: None,
    };
    for &k in k_schedule {
        let cfg = SolveConfig { k, ..config.clone() };
        let start = out.results.last().map(|r: &SolveResult| (&r.u, &r.v, r.a_k));
        match picard_system_solve_from(f, spec, p, &cfg, start) {
            Ok(res) => {
                if let Some(prev) = out.results.last() {
                    out.cauchy.push(CauchyStep {
                        k_from: prev.config.k,
                        k_to: k,
                        du: w1p_seminorm(&prev.u.sub(&res.u)?, p)?,
                        dv: w1p_seminorm(&prev.v.sub(&res.v)?, p)?,
                    });
                }
                out.a_trajectory.push(res.a_k);
                out.results.push(res);
            }
            Err(e) => {
                out.error = Some(e);
                break;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum LinfVerdict {
    NotApplicable {
        reason: String,
    },
    /// Ratios of the sup norms to the shape of the bound (constant unknown).
    Applicable {
        max_u: f64,
        max_v: f64,
        datum_norm: f64,
        shape_u: f64,
        shape_v: f64,
        ratio_u: f64,
        ratio_v: f64,
    },
}

/// Sup norms of a solution against the shape of the a priori `L^inf` bounds,
/// `||F||_t^{1/(p-1)} max(1, k^{1/(p-1)})` for `u` and the corresponding
/// power of `||F||_t` and `k` plus one for `v`.
pub fn linf_report(result: &SolveResult, f: &Field, params: &ProblemParams, t: f64, k: f64) -> Result<LinfVerdict> {
    let n = params.n_dim;
    let p = params.p;
    if !(t > n / p) {
        return Ok(LinfVerdict::NotApplicable {
            reason: format!("datum exponent t = {t} does not exceed N/p = {}", n / p),
        });
    }
    let bound_theta = p * p / (n - p);
    if !(params.theta < bound_theta) {
        return Ok(LinfVerdict::NotApplicable {
            reason: format!("theta = {} is not below p^2/(N-p) = {bound_theta}", params.theta),
        });
    }
    let fk = f.truncated(k)?;
    let fnorm = crate::discretization::lq_norm(&fk, t)?;
    let (r, th) = (params.r, params.theta);
    let kf = if k.is_finite() { k } else { 1.0 };
    let shape_u = fnorm.powf(1.0 / (p - 1.0)) * kf.powf(1.0 / (p - 1.0)).max(1.0);
    let ev = (r * (2.0 * p - 1.0) + th * (p - 1.0)) / ((p - 1.0).powi(2) * (2.0 * p - 1.0));
    let shape_v = fnorm.powf(ev) * kf.powf((r + p - 1.0) / (p - 1.0).powi(2)).max(1.0) + 1.0;
    let (max_u, max_v) = (result.u.max_abs(), result.v.max_abs());
    let ratio = |m: f64, s: f64| if m == 0.0 { 0.0 } else { m / s };
    Ok(LinfVerdict::Applicable {
        max_u,
        max_v,
        datum_norm: fnorm,
        shape_u,
        shape_v,
        ratio_u: ratio(max_u, shape_u),
        ratio_v: ratio(max_v, shape_v),
    })
}

/// Total `p`-energy of both components.
pub fn total_gradient_energy(u: &Field, v: &Field, p: f64) -> f64 {
    gradient_p_energy(u, p) + gradient_p_energy(v, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{lq_norm, weak_residual_dual_norm};
    use std::f64::consts::PI;

    fn zero_spec() -> NonlinearitySpec {
        NonlinearitySpec::zero_coupling(2.0, 0.5).unwrap()
    }

    fn l2_error(u: &Field, exact: impl Fn(f64) -> f64) -> f64 {
        let e = Field::from_fn(u.grid(), |x| exact(x[0]));
        lq_norm(&u.sub(&e).unwrap(), 2.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SolveConfig::new(10.0, 2.0).validate().is_ok());
        let mut c = SolveConfig::new(10.0, 3.0);
        c.relax = 0.0;
        assert!(c.validate().is_err());
        let mut c = SolveConfig::new(10.0, 3.0);
        c.eps_schedule = vec![1e-2, 1e-2];
        assert!(c.validate().is_err());
        let mut c = SolveConfig::new(10.0, 3.0);
        c.inner_tol = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn inner_manufactured_p2() {
        let errs: Vec<f64> = [33, 65, 129]
            .iter()
            .map(|&n| {
                let g = Grid::unit(1, n).unwrap();
                let src = Field::from_fn(&g, |x| PI * PI * (PI * x[0]).sin());
                let z = Field::zeros(&g);
                let cfg = SolveConfig::new(f64::INFINITY, 2.0);
                let s = inner_scalar_solve(1.0, &z, Equation::First, &src, &zero_spec(), 2.0, &cfg, None).unwrap();
                assert!(s.converged);
                l2_error(&s.field, |x| (PI * x).sin())
            })
            .collect();
        let rate = (errs[0] / errs[1]).log2();
        assert!((rate - 2.0).abs() < 0.15, "{errs:?}");
        assert!(errs[2] < errs[1]);
    }

    #[test]
    fn inner_zero_datum_gives_zero() {
        let g = Grid::unit(2, 9).unwrap();
        let z = Field::zeros(&g);
        let cfg = SolveConfig::new(10.0, 3.0);
        let spec = NonlinearitySpec::prototype(2.0, 0.5).unwrap();
        let s = inner_scalar_solve(1.0, &z, Equation::First, &z, &spec, 3.0, &cfg, None).unwrap();
        assert_eq!(s.field.max_abs(), 0.0);
        assert!(s.converged);
    }

    #[test]
    fn inner_manufactured_p3() {
        let mut prev = f64::INFINITY;
        for n in [33, 65, 129] {
            let g = Grid::unit(1, n).unwrap();
            let src = Field::from_fn(&g, |x| 4.0 * (1.0 - 2.0 * x[0]).abs());
            let z = Field::zeros(&g);
            let cfg = SolveConfig::new(f64::INFINITY, 3.0);
            let s = inner_scalar_solve(1.0, &z, Equation::First, &src, &zero_spec(), 3.0, &cfg, None).unwrap();
            assert!(s.converged, "n={n} residual {}", s.residual);
            let e = l2_error(&s.field, |x| x * (1.0 - x));
            assert!(e < prev, "n={n}: {e} vs {prev}");
            prev = e;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn energy_descends_for_prototype() {
        let g = Grid::unit(1, 65).unwrap();
        let spec = NonlinearitySpec::prototype(3.0, 0.5).unwrap();
        let partner = Field::from_fn(&g, |x| 1.0 + (PI * x[0]).sin());
        let src = Field::from_fn(&g, |x| 50.0 * (1.0 + x[0]));
        for p in [1.5, 2.0, 3.0] {
            let cfg = SolveConfig::new(10.0, p);
            let s = inner_scalar_solve(0.7, &partner, Equation::First, &src, &spec, p, &cfg, None).unwrap();
            assert!(s.converged, "p={p}");
            for stage in &s.energy_trace {
                for w in stage.windows(2) {
                    assert!(w[1] <= w[0] + 1e-12 * w[0].abs(), "p={p}: {stage:?}");
                }
            }
        }
    }

    #[test]
    fn linear_scaling_with_frozen_coefficient() {
        let g = Grid::unit(1, 65).unwrap();
        let src = Field::from_fn(&g, |x| 1.0 + x[0]);
        let z = Field::zeros(&g);
        let cfg = SolveConfig::new(f64::INFINITY, 2.0);
        let u1 = inner_scalar_solve(1.3, &z, Equation::First, &src, &zero_spec(), 2.0, &cfg, None).unwrap();
        let u2 = inner_scalar_solve(1.3, &z, Equation::First, &src.scaled(2.0), &zero_spec(), 2.0, &cfg, None).unwrap();
        for (a, b) in u1.field.values().iter().zip(u2.field.values()) {
            assert!((2.0 * a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_datum_system_drives_v_only() {
        let g = Grid::unit(1, 65).unwrap();
        let spec = NonlinearitySpec::prototype(2.0, 0.5).unwrap();
        let cfg = SolveConfig::new(10.0, 2.0);
        let res = picard_system_solve(&Field::zeros(&g), &spec, 2.0, &cfg).unwrap();
        assert!(res.converged);
        assert_eq!(res.u.max_abs(), 0.0);
        // Oracle: with u = 0 the second equation is -A v'' = 1/k with A
        // depending on v; re-solve it with the converged A frozen.
        let inv_k = Field::from_fn(&g, |_| 0.1);
        let v = inner_scalar_solve(res.a_k, &res.u, Equation::Second, &inv_k, &spec, 2.0, &cfg, None)
            .unwrap()
            .into_result()
            .unwrap();
        for (a, b) in v.values().iter().zip(res.v.values()) {
            assert!((a - b).abs() < 1e-7 * (1.0 + b.abs()));
        }
        assert!(res.v.interior_min() > 0.0);
    }

    #[test]
    fn prototype_system_converges_with_certificate() {
        let g = Grid::unit(1, 65).unwrap();
        let spec = NonlinearitySpec::prototype(2.0, 0.5).unwrap();
        let f = Field::from_fn(&g, |_| 1.0);
        let cfg = SolveConfig::new(10.0, 2.0);
        let res = picard_system_solve(&f, &spec, 2.0, &cfg).unwrap();
        assert!(res.converged, "{:?}", res.history.last());
        for eq in [Equation::First, Equation::Second] {
            let r = weak_residual_dual_norm(&res.u, &res.v, &f, &spec, 2.0, eq, 10.0, 0.0).unwrap();
            assert!(r <= cfg.outer_tol);
        }
        assert!(res.history.iter().all(|h| h.a_used >= 0.1 && h.a_new >= 0.1));
        assert!(res.positivity.u_nonnegative && res.positivity.v_positive);
        // Determinism.
        let again = picard_system_solve(&f, &spec, 2.0, &cfg).unwrap();
        assert_eq!(again.u.values(), res.u.values());
        assert_eq!(again.a_k.to_bits(), res.a_k.to_bits());
    }

    #[test]
    fn negative_lobe_is_reported() {
        let g = Grid::unit(1, 65).unwrap();
        let spec = NonlinearitySpec::prototype(2.0, 0.5).unwrap();
        let f = Field::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        let res = picard_system_solve(&f, &spec, 2.0, &SolveConfig::new(10.0, 2.0)).unwrap();
        assert!(res.converged);
        assert!(!res.positivity.u_nonnegative);
    }

    #[test]
    fn continuation_examples() {
        let g = Grid::unit(1, 33).unwrap();
        let spec = NonlinearitySpec::prototype(2.0, 0.5).unwrap();
        let cfg = SolveConfig::new(1.0, 2.0);
        let single = k_continuation(&Field::zeros(&g), &spec, 2.0, &[1.0], &cfg).unwrap();
        assert_eq!(single.results.len(), 1);
        assert!(single.cauchy.is_empty());
        let zero = k_continuation(&Field::zeros(&g), &spec, 2.0, &[1.0, 4.0, 16.0], &cfg).unwrap();
        assert!(zero.cauchy.iter().all(|c| c.du == 0.0));
        assert!(k_continuation(&Field::zeros(&g), &spec, 2.0, &[4.0, 1.0], &cfg).is_err());
    }

    #[test]
    fn linf_report_examples() {
        let g = Grid::unit(1, 33).unwrap();
        let spec = NonlinearitySpec::prototype(2.0, 0.5).unwrap();
        let res = picard_system_solve(&Field::zeros(&g), &spec, 2.0, &SolveConfig::new(10.0, 2.0)).unwrap();
        let params = ProblemParams::new(3.0, 2.0, 2.0, 0.5, 1.3).unwrap();
        match linf_report(&res, &Field::zeros(&g), &params, 4.0, 10.0).unwrap() {
            LinfVerdict::Applicable { max_u, ratio_u, .. } => assert_eq!((max_u, ratio_u), (0.0, 0.0)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            linf_report(&res, &Field::zeros(&g), &params, 1.5, 10.0).unwrap(),
            LinfVerdict::NotApplicable { .. }
        ));
    }

    #[test]
    fn oscillation_window() {
        let rec = |i: usize, d: f64| OuterRecord {
            iteration: i,
            a_used: 1.0,
            a_new: 1.0 + d,
            residual_first: 1.0,
            residual_second: 1.0,
            min_u: 0.0,
            min_v: 0.0,
            newton_steps: 1,
        };
        let cyc: Vec<_> = (0..8).map(|i| rec(i, if i % 2 == 0 { 0.3 } else { -0.3 })).collect();
        assert!(oscillating(&cyc));
        let damped: Vec<_> = (0..8).map(|i| rec(i, 0.3 * (-0.5f64).powi(i as i32))).collect();
        assert!(!oscillating(&damped));
        assert!(!oscillating(&cyc[..7]));
    }
}
