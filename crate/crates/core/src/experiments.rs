//! Verification campaigns on computed solutions: scaling sweeps, sup-norm
//! scaling, mixed energy, tail integrals, nontriviality under refinement and
//! level-set regularity probes.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::discretization::{lq_norm, w1p_seminorm, Equation, Field, Grid};
use crate::error::{KmsError, Result};
use crate::exponents::{admissibility_check, holder_conjugate, sigma_exponent, ProblemParams};
use crate::nonlinearity::{pow_abs, NonlinearitySpec};
use crate::solver::{inner_scalar_solve, picard_system_solve, SolveConfig, SolveResult};

/// Default allowance above an exponent before a slope fails.
pub const DEFAULT_SLACK: f64 = 0.1;
/// Fits with a larger RMS log residual are only a weak pass.
pub const WEAK_FIT_RESIDUAL: f64 = 0.05;
const MIN_SWEEP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Verdict {
    Pass,
    WeakPass,
    Fail,
    NotApplicable,
}

impl Verdict {
    pub fn is_pass(self) -> bool {
        matches!(self, Verdict::Pass | Verdict::WeakPass)
    }
}

/// Least-squares line through `(log x, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS residual in log space.
    pub residual: f64,
    pub points: usize,
}

/// Fits `log y = a log x + b`; `None` if fewer than two usable points.
pub fn fit_log_log(xs: &[f64], ys: &[f64]) -> Option<LogFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 || pts.len() != xs.len() {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Some(LogFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
        points: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeVerdict {
    pub quantity: String,
    pub fit: Option<LogFit>,
    pub target: f64,
    pub slack: f64,
    pub verdict: Verdict,
}

impl SlopeVerdict {
    /// One-sided check `slope <= target + slack`.
    pub fn upper(quantity: &str, fit: Option<LogFit>, target: f64, slack: f64) -> Self {
        let verdict = match fit {
            None => Verdict::NotApplicable,
            Some(f) if f.slope <= target + slack => {
                if f.residual > WEAK_FIT_RESIDUAL {
                    Verdict::WeakPass
                } else {
                    Verdict::Pass
                }
            }
            Some(_) => Verdict::Fail,
        };
        Self {
            quantity: quantity.to_string(),
            fit,
            target,
            slack,
            verdict,
        }
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// Norms of one sweep point; entries not computed by a campaign are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub converged: bool,
    pub a_k: Option<f64>,
    pub u_coupling_norm: Option<f64>,
    pub w1p_u: Option<f64>,
    pub w1p_v: Option<f64>,
    pub mixed_energy: Option<f64>,
    pub max_u: f64,
    pub max_v: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceExponents {
    pub sigma: f64,
    pub inv_p_minus_one: f64,
    /// `(sigma + 1) / (2p)`, the bound exponent for the `W^{1,p}` norm itself.
    pub gradient: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub lambdas: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub slopes: Vec<SlopeVerdict>,
    pub exponents: ReferenceExponents,
    /// Sweep points dropped because the solver failed.
    pub failures: Vec<(f64, String)>,
}

impl EstimateReport {
    pub fn slope(&self, quantity: &str) -> Option<&SlopeVerdict> {
        self.slopes.iter().find(|s| s.quantity == quantity)
    }

    pub fn all_pass(&self) -> bool {
        self.slopes
            .iter()
            .all(|s| s.verdict.is_pass() || s.verdict == Verdict::NotApplicable)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "lambda,converged,a_k,u_coupling_norm,w1p_u,w1p_v,mixed_energy,max_u,max_v")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.lambda,
                r.converged,
                opt(r.a_k),
                opt(r.u_coupling_norm),
                opt(r.w1p_u),
                opt(r.w1p_v),
                opt(r.mixed_energy),
                r.max_u,
                opt(r.max_v)
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        json!({
            "lambdas": self.lambdas,
            "slopes": self.slopes,
            "exponents": self.exponents,
            "failures": self.failures,
            "all_pass": self.all_pass(),
        })
    }
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.len() < MIN_SWEEP {
        return Err(KmsError::InsufficientSweep {
            required: MIN_SWEEP,
            got: lambdas.len(),
        });
    }
    if lambdas.iter().any(|l| !(*l > 0.0)) || lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(KmsError::InvalidParameter("sweep values must be positive and strictly increasing".into()));
    }
    Ok(())
}

fn reference_exponents(params: &ProblemParams) -> ReferenceExponents {
    let sigma = sigma_exponent(params);
    ReferenceExponents {
        sigma,
        inv_p_minus_one: 1.0 / (params.p - 1.0),
        gradient: (sigma + 1.0) / (2.0 * params.p),
    }
}

/// Solves the coupled system for `f = lambda f0` over the sweep and fits the
/// growth of the a priori quantities against `lambda`.
pub fn apriori_scaling_sweep(
    f0: &Field,
    lambdas: &[f64],
    spec: &NonlinearitySpec,
    params: &ProblemParams,
    config: &SolveConfig,
    slack: f64,
) -> Result<EstimateReport> {
    check_lambdas(lambdas)?;
    let verdict = admissibility_check(params);
    if !verdict.admissible {
        return Err(KmsError::Inadmissible(verdict.reasons().join("; ")));
    }
    let p = params.p;
    let q = params.coupling_exponent();
    let outcomes: Vec<Result<SolveResult>> = lambdas
        .par_iter()
        .map(|&l| picard_system_solve(&f0.scaled(l), spec, p, config))
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&lambda, out) in lambdas.iter().zip(outcomes) {
        match out {
            Ok(res) if res.converged => {
                let mixed = mixed_energy(&res.u, &res.v, params.r, params.theta)?;
                rows.push(SweepRow {
                    lambda,
                    converged: true,
                    a_k: Some(res.a_k),
                    u_coupling_norm: Some(lq_norm(&res.u, q)?),
                    w1p_u: Some(w1p_seminorm(&res.u, p)?),
                    w1p_v: Some(w1p_seminorm(&res.v, p)?),
                    mixed_energy: Some(mixed.value),
                    max_u: res.u.max_abs(),
                    max_v: Some(res.v.max_abs()),
                });
            }
            Ok(res) => failures.push((lambda, format!("{:?} after {} iterations", res.status, res.outer_iterations))),
            Err(e) => failures.push((lambda, e.to_string())),
        }
    }
    if rows.len() < MIN_SWEEP {
        return Err(KmsError::InsufficientSweep {
            required: MIN_SWEEP,
            got: rows.len(),
        });
    }
    let exponents = reference_exponents(params);
    let xs: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let col = |f: &dyn Fn(&SweepRow) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    let two_p = 2.0 * p;
    let un = col(&|r| r.u_coupling_norm.unwrap());
    let wu = col(&|r| r.w1p_u.unwrap().powf(two_p));
    let mixed = col(&|r| r.mixed_energy.unwrap());
    let total = col(&|r| r.w1p_u.unwrap().powf(two_p) + r.w1p_v.unwrap().powf(two_p) + r.mixed_energy.unwrap());
    let s = exponents.sigma;
    let slopes = vec![
        SlopeVerdict::upper("u_coupling_norm", fit_log_log(&xs, &un), s, slack),
        SlopeVerdict::upper("w1p_u_pow_2p", fit_log_log(&xs, &wu), s + 1.0, slack),
        SlopeVerdict::upper("mixed_energy", fit_log_log(&xs, &mixed), s + 1.0, slack),
        SlopeVerdict::upper("energy_total", fit_log_log(&xs, &total), s + 1.0, slack),
    ];
    Ok(EstimateReport {
        lambdas: lambdas.to_vec(),
        rows,
        slopes,
        exponents,
        failures,
    })
}

/// Sup-norm growth of the single equation `-div(|grad w|^{p-2} grad w) =
/// lambda F0` with unit coefficient and no reaction.
pub fn linf_scaling_probe(
    f0: &Field,
    lambdas: &[f64],
    t: f64,
    p: f64,
    n_dim: f64,
    config: &SolveConfig,
    slack: f64,
) -> Result<EstimateReport> {
    if !(t > n_dim / p) {
        return Err(KmsError::NotApplicable(format!(
            "datum exponent t = {t} does not exceed N/p = {}",
            n_dim / p
        )));
    }
    check_lambdas(lambdas)?;
    let spec = NonlinearitySpec::zero_coupling(2.0, 0.5)?;
    let zero = Field::zeros(f0.grid());
    let outcomes: Vec<Result<Field>> = lambdas
        .par_iter()
        .map(|&l| {
            inner_scalar_solve(1.0, &zero, Equation::First, &f0.scaled(l), &spec, p, config, None)?.into_result()
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&lambda, out) in lambdas.iter().zip(outcomes) {
        match out {
            Ok(w) => rows.push(SweepRow {
                lambda,
                converged: true,
                a_k: None,
                u_coupling_norm: None,
                w1p_u: Some(w1p_seminorm(&w, p)?),
                w1p_v: None,
                mixed_energy: None,
                max_u: w.max_abs(),
                max_v: None,
            }),
            Err(e) => failures.push((lambda, e.to_string())),
        }
    }
    if rows.len() < MIN_SWEEP {
        return Err(KmsError::InsufficientSweep {
            required: MIN_SWEEP,
            got: rows.len(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.max_u).collect();
    let target = 1.0 / (p - 1.0);
    Ok(EstimateReport {
        lambdas: lambdas.to_vec(),
        rows,
        slopes: vec![SlopeVerdict::upper("max_u", fit_log_log(&xs, &ys), target, slack)],
        exponents: ReferenceExponents {
            sigma: f64::NAN,
            inv_p_minus_one: target,
            gradient: f64::NAN,
        },
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixedEnergy {
    pub value: f64,
    /// Nodes where a negative value of `u` or `v` was clipped to zero.
    pub clipped: usize,
}

/// `int u^r v^{theta+1}` by barycenter quadrature, negative parts clipped.
pub fn mixed_energy(u: &Field, v: &Field, r: f64, theta: f64) -> Result<MixedEnergy> {
    u.check_grid(v)?;
    let clipped = u
        .values()
        .iter()
        .zip(v.values())
        .filter(|(a, b)| **a < 0.0 || **b < 0.0)
        .count();
    let grid = u.grid();
    let d = grid.dim();
    let inv = 1.0 / (d + 1) as f64;
    let (uv, vv) = (u.values(), v.values());
    let terms: Vec<f64> = grid
        .elements()
        .iter()
        .map(|e| {
            let vs = &e.verts[..=d];
            let a = vs.iter().map(|&i| uv[i].max(0.0)).sum::<f64>() * inv;
            let b = vs.iter().map(|&i| vv[i].max(0.0)).sum::<f64>() * inv;
            pow_abs(a, r) * pow_abs(b, theta + 1.0) * grid.element_volume()
        })
        .collect();
    Ok(MixedEnergy {
        value: crate::discretization::pairwise_sum(&terms),
        clipped,
    })
}

/// Lumped integral of `integrand` over the nodes where `|u| > n`, summed in
/// node order so that nested level sets give ordered results.
pub fn superlevel_integral(u: &Field, n: f64, integrand: &[f64]) -> f64 {
    let mass = u.grid().lumped_mass();
    let mut s = 0.0;
    for (i, &val) in u.values().iter().enumerate() {
        if val.abs() > n {
            s += mass[i] * integrand[i].abs();
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailProduct {
    GU,
    HV,
    G,
    H,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub level: f64,
    pub integral: f64,
}

/// `int_{|u| > n} |H(x, u, v)|` for each level `n`.
pub fn tail_uniform_integrability(
    spec: &NonlinearitySpec,
    u: &Field,
    v: &Field,
    levels: &[f64],
    which: TailProduct,
) -> Result<Vec<TailRow>> {
    u.check_grid(v)?;
    let grid = u.grid();
    let integrand: Vec<f64> = (0..grid.num_nodes())
        .map(|i| {
            let x = grid.node_coords(i);
            let (s, t) = (u.values()[i], v.values()[i]);
            match which {
                TailProduct::GU => spec.g_eval(&x, s, t) * s,
                TailProduct::HV => spec.h_eval(&x, s, t) * t,
                TailProduct::G => spec.g_eval(&x, s, t),
                TailProduct::H => spec.h_eval(&x, s, t),
            }
        })
        .collect();
    Ok(levels
        .iter()
        .map(|&n| TailRow {
            level: n,
            integral: superlevel_integral(u, n, &integrand),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProofChainLevel {
    pub level: f64,
    /// `int_{u > n} g(x,u,v) u`.
    pub reaction: f64,
    /// `int_{u > n} f u`.
    pub majorant: f64,
    pub holds: bool,
}

/// Inequalities obtained by testing the first equation with monotone
/// functions of `u`, evaluated with the same lumped quadrature as the
/// discrete equations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProofChainReport {
    pub levels: Vec<ProofChainLevel>,
    /// `c1 int u^r v^{theta+1}` (lumped).
    pub c1_mixed: f64,
    /// `int f u` (lumped).
    pub f_u: f64,
    pub mixed_holds: bool,
    pub tolerance: f64,
    pub all_hold: bool,
}

pub fn proof_chain_check(
    u: &Field,
    v: &Field,
    f: &Field,
    spec: &NonlinearitySpec,
    r: f64,
    theta: f64,
    n_levels: usize,
) -> Result<ProofChainReport> {
    u.check_grid(v)?;
    u.check_grid(f)?;
    let grid = u.grid();
    let nodes = grid.num_nodes();
    let x: Vec<Vec<f64>> = (0..nodes).map(|i| grid.node_coords(i)).collect();
    let (uv, vv, fv) = (u.values(), v.values(), f.values());
    let gu: Vec<f64> = (0..nodes).map(|i| spec.g_eval(&x[i], uv[i], vv[i]) * uv[i]).collect();
    let fu: Vec<f64> = (0..nodes).map(|i| fv[i] * uv[i]).collect();
    let mixed: Vec<f64> = (0..nodes)
        .map(|i| pow_abs(uv[i].max(0.0), r) * pow_abs(vv[i].max(0.0), theta + 1.0))
        .collect();
    let max_u = u.max_abs();
    let scale = superlevel_integral(u, -1.0, &fu) + superlevel_integral(u, -1.0, &gu);
    let tolerance = 1e-8 * scale.max(f64::MIN_POSITIVE);
    let levels: Vec<ProofChainLevel> = (0..n_levels)
        .map(|j| {
            let n = max_u * j as f64 / n_levels as f64;
            let reaction = superlevel_integral(u, n, &gu);
            let majorant = superlevel_integral(u, n, &fu);
            ProofChainLevel {
                level: n,
                reaction,
                majorant,
                holds: reaction <= majorant + tolerance,
            }
        })
        .collect();
    let c1_mixed = spec.constants.c1 * crate::discretization::lumped_integral(grid, &mixed);
    let f_u = crate::discretization::lumped_integral(grid, &fu);
    let mixed_holds = c1_mixed <= f_u + tolerance;
    let all_hold = mixed_holds && levels.iter().all(|l| l.holds);
    Ok(ProofChainReport {
        levels,
        c1_mixed,
        f_u,
        mixed_holds,
        tolerance,
        all_hold,
    })
}

/// Data for the source term.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Datum {
    Zero,
    Constant { value: f64 },
    /// `amplitude |x - center|^{-gamma}`, with the center moved to the nearest
    /// cell midpoint of the grid it is sampled on.
    Singular { center: Vec<f64>, gamma: f64, amplitude: f64 },
}

impl Datum {
    pub fn sample(&self, grid: &Arc<Grid>) -> Result<Field> {
        match self {
            Datum::Zero => Ok(Field::zeros(grid)),
            Datum::Constant { value } => Ok(Field::from_fn(grid, |_| *value)),
            Datum::Singular { center, gamma, amplitude } => {
                if center.len() != grid.dim() {
                    return Err(KmsError::InvalidParameter(format!(
                        "singular datum center has {} coordinates on a {}-dimensional grid",
                        center.len(),
                        grid.dim()
                    )));
                }
                if !(*gamma > 0.0) {
                    return Err(KmsError::InvalidParameter("singularity exponent must be positive".into()));
                }
                let c = cell_midpoint(grid, center);
                Ok(Field::from_fn(grid, |x| {
                    let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                    amplitude * r2.powf(-0.5 * gamma)
                }))
            }
        }
    }

    /// Whether the continuum datum lies in `L^q` of a `d`-dimensional domain.
    pub fn in_lebesgue(&self, d: usize, q: f64) -> bool {
        match self {
            Datum::Singular { gamma, .. } => gamma * q < d as f64,
            _ => true,
        }
    }
}

/// Nearest cell midpoint to `c`, per axis.
pub fn cell_midpoint(grid: &Grid, c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .map(|(a, &ca)| {
            let (lo, _) = grid.extent()[a];
            let h = grid.spacing()[a];
            let cells = grid.n_per_axis() - 1;
            let idx = ((ca - lo) / h).floor().clamp(0.0, (cells - 1) as f64);
            lo + (idx + 0.5) * h
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NontrivialLevel {
    pub n_per_axis: usize,
    pub l1_u: f64,
    pub l1_v: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NontrivialityVerdict {
    pub datum: Datum,
    pub grid_dim: usize,
    /// Continuum datum in `L^m`.
    pub datum_in_lm: bool,
    /// Continuum datum in `L^{(p*)'}`.
    pub datum_in_pstar_conj: bool,
    pub levels: Vec<NontrivialLevel>,
    pub floor_u: f64,
    pub floor_v: f64,
    pub u_nontrivial: bool,
    pub v_nontrivial: bool,
    pub verdict: Verdict,
}

/// Solves on each refinement level and checks that the `L^1` norms of both
/// components stay above half of their coarsest-level values.
pub fn nontriviality_check(
    datum: &Datum,
    params: &ProblemParams,
    spec: &NonlinearitySpec,
    grid_dim: usize,
    refinements: &[usize],
    config: &SolveConfig,
) -> Result<NontrivialityVerdict> {
    let adm = admissibility_check(params);
    if !adm.admissible {
        return Err(KmsError::Inadmissible(adm.reasons().join("; ")));
    }
    let pstar_conj = holder_conjugate(params.p_star())?;
    if !(params.m < pstar_conj) {
        return Err(KmsError::Inadmissible(format!(
            "nontriviality of v needs m < (p*)' = {pstar_conj}, got m = {}",
            params.m
        )));
    }
    if refinements.is_empty() {
        return Err(KmsError::InvalidParameter("need at least one refinement level".into()));
    }
    let outcomes: Vec<Result<NontrivialLevel>> = refinements
        .par_iter()
        .map(|&n| {
            let grid = Grid::unit(grid_dim, n)?;
            let f = datum.sample(&grid)?;
            let res = picard_system_solve(&f, spec, params.p, config)?;
            Ok(NontrivialLevel {
                n_per_axis: n,
                l1_u: lq_norm(&res.u, 1.0)?,
                l1_v: lq_norm(&res.v, 1.0)?,
                converged: res.converged,
            })
        })
        .collect();
    let levels = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let floor_u = 0.5 * levels[0].l1_u;
    let floor_v = 0.5 * levels[0].l1_v;
    let u_nontrivial = levels.iter().all(|l| l.converged && l.l1_u > floor_u);
    let v_nontrivial = levels.iter().all(|l| l.converged && l.l1_v > floor_v);
    Ok(NontrivialityVerdict {
        datum: datum.clone(),
        grid_dim,
        datum_in_lm: datum.in_lebesgue(grid_dim, params.m),
        datum_in_pstar_conj: datum.in_lebesgue(grid_dim, pstar_conj),
        levels,
        floor_u,
        floor_v,
        u_nontrivial,
        v_nontrivial,
        verdict: if u_nontrivial && v_nontrivial {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeVerdict {
    Fitted,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub norms: Vec<(f64, f64)>,
    pub levels: Vec<f64>,
    pub measures: Vec<f64>,
    /// Empirical `s` in `meas{|u| > lambda} ~ lambda^{-s}`.
    pub tail_exponent: Option<f64>,
    pub fit_residual: Option<f64>,
    /// Range of levels the fit actually saw.
    pub resolvable_range: (f64, f64),
    pub verdict: ProbeVerdict,
}

const PROBE_LEVELS: usize = 12;

/// `L^q` norms of `u` and the decay of its distribution function over the
/// top decade of its range. Diagnostic only: the grid resolves a
/// singularity down to the mesh size and no further.
pub fn regularity_probe(u: &Field, q_grid: &[f64]) -> Result<RegularityReport> {
    let norms = q_grid
        .iter()
        .map(|&q| {
            if !(q > 1.0) {
                return Err(KmsError::InvalidParameter(format!("probe exponent {q} must exceed 1")));
            }
            Ok((q, lq_norm(u, q)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let top = u.max_abs();
    let levels: Vec<f64> = (0..PROBE_LEVELS)
        .map(|j| top * 10f64.powf(-1.0 + j as f64 / PROBE_LEVELS as f64))
        .collect();
    let ones = vec![1.0; u.grid().num_nodes()];
    let measures: Vec<f64> = levels.iter().map(|&l| superlevel_integral(u, l, &ones)).collect();
    let mut distinct: Vec<f64> = measures.iter().cloned().filter(|m| *m > 0.0).collect();
    distinct.dedup();
    let fit = if top > 0.0 && distinct.len() >= 4 {
        fit_log_log(&levels, &measures)
    } else {
        None
    };
    Ok(RegularityReport {
        norms,
        resolvable_range: (levels[0], levels[PROBE_LEVELS - 1]),
        levels,
        measures,
        tail_exponent: fit.map(|f| -f.slope),
        fit_residual: fit.map(|f| f.residual),
        verdict: if fit.is_some() {
            ProbeVerdict::Fitted
        } else {
            ProbeVerdict::Inconclusive
        },
    })
}
