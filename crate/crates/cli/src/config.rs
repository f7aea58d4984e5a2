//! Run configuration read from a single TOML document.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use kmslab::experiments::{Datum, DEFAULT_SLACK};
use kmslab::nonlinearity::{pow_abs, Evaluator, GrowthConstants, NonlinearitySpec};
use kmslab::{Grid, ProblemParams, SolveConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: Option<ProblemParams>,
    pub nonlinearity: Option<NonlinearityConfig>,
    pub grid: Option<GridConfig>,
    pub solve: Option<SolveSection>,
    pub datum: Option<Datum>,
    pub sweep: Option<SweepSection>,
    pub probe: Option<ProbeSection>,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKind {
    Prototype,
    /// Constant weights `v1`, `v2` (default 1).
    Oscillatory,
    ZeroCoupling,
    /// Prototype pair multiplied by `g_scale` and `h_scale`, with declared
    /// constants. Negative or large scales make hypothesis violations easy
    /// to construct.
    ScaledPrototype,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub kind: NonlinearityKind,
    /// Defaults to the `problem` section's exponents.
    pub r: Option<f64>,
    pub theta: Option<f64>,
    pub v1: Option<f64>,
    pub v2: Option<f64>,
    pub g_scale: Option<f64>,
    pub h_scale: Option<f64>,
    pub constants: Option<GrowthConstants>,
    /// Sample count for the hypothesis verifier.
    pub samples: Option<usize>,
    /// Dimension of the sampled `x`.
    pub sample_dim: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    pub n_per_axis: usize,
    pub extent: Option<Vec<[f64; 2]>>,
}

/// `k` is required; every other field overrides the default solver setting.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub k: f64,
    pub eps_schedule: Option<Vec<f64>>,
    pub outer_tol: Option<f64>,
    pub inner_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub relax: Option<f64>,
    pub positivity_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    Apriori,
    Linf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub mode: SweepMode,
    pub lambdas: Option<Vec<f64>>,
    pub k_schedule: Option<Vec<f64>>,
    pub n_grid: Option<Vec<usize>>,
    pub slack: Option<f64>,
    /// Integrability exponent of the datum for the `L^inf` probe.
    pub t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Nontriviality,
    Regularity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub kind: ProbeKind,
    pub q_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    pub outdir: Option<PathBuf>,
    pub label: Option<String>,
}

fn missing(section: &str, command: &str) -> CliError {
    CliError::config(format!("[{section}] section is required by `{command}`"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        if let Some(p) = &cfg.problem {
            p.validate().map_err(|e| CliError::config(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn problem(&self, command: &str) -> Result<ProblemParams, CliError> {
        self.problem.ok_or_else(|| missing("problem", command))
    }

    pub fn nonlinearity(&self, command: &str) -> Result<NonlinearitySpec, CliError> {
        let nl = self.nonlinearity.as_ref().ok_or_else(|| missing("nonlinearity", command))?;
        let r = nl.r.or(self.problem.map(|p| p.r));
        let theta = nl.theta.or(self.problem.map(|p| p.theta));
        let (Some(r), Some(theta)) = (r, theta) else {
            return Err(CliError::config(
                "nonlinearity needs r and theta, either inline or from [problem]",
            ));
        };
        nl.build(r, theta)
    }

    pub fn grid(&self, command: &str) -> Result<Arc<Grid>, CliError> {
        let g = self.grid.as_ref().ok_or_else(|| missing("grid", command))?;
        let extent = match &g.extent {
            Some(e) => e.iter().map(|[a, b]| (*a, *b)).collect(),
            None => vec![(0.0, 1.0); g.d],
        };
        Grid::new(g.d, g.n_per_axis, extent).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn solve_config(&self, command: &str, p: f64) -> Result<SolveConfig, CliError> {
        let s = self.solve.as_ref().ok_or_else(|| missing("solve", command))?;
        let mut c = SolveConfig::new(s.k, p);
        if let Some(v) = &s.eps_schedule {
            c.eps_schedule = v.clone();
        }
        c.outer_tol = s.outer_tol.unwrap_or(c.outer_tol);
        c.inner_tol = s.inner_tol.unwrap_or(c.inner_tol);
        c.max_outer = s.max_outer.unwrap_or(c.max_outer);
        c.max_inner = s.max_inner.unwrap_or(c.max_inner);
        c.relax = s.relax.unwrap_or(c.relax);
        c.positivity_tol = s.positivity_tol.unwrap_or(c.positivity_tol);
        c.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(c)
    }

    pub fn datum(&self, command: &str) -> Result<&Datum, CliError> {
        self.datum.as_ref().ok_or_else(|| missing("datum", command))
    }

    pub fn sweep(&self, command: &str) -> Result<&SweepSection, CliError> {
        self.sweep.as_ref().ok_or_else(|| missing("sweep", command))
    }

    pub fn probe(&self, command: &str) -> Result<&ProbeSection, CliError> {
        self.probe.as_ref().ok_or_else(|| missing("probe", command))
    }
}

impl SweepSection {
    pub fn slack(&self) -> f64 {
        self.slack.unwrap_or(DEFAULT_SLACK)
    }
}

impl NonlinearityConfig {
    fn build(&self, r: f64, theta: f64) -> Result<NonlinearitySpec, CliError> {
        let unused = |name: &str, set: bool| -> Result<(), CliError> {
            if set {
                Err(CliError::config(format!("`{name}` does not apply to nonlinearity kind {:?}", self.kind)))
            } else {
                Ok(())
            }
        };
        let weights = self.v1.is_some() || self.v2.is_some();
        let scales = self.g_scale.is_some() || self.h_scale.is_some();
        let spec = match self.kind {
            NonlinearityKind::Prototype | NonlinearityKind::ZeroCoupling => {
                unused("v1/v2", weights)?;
                unused("g_scale/h_scale", scales)?;
                unused("constants", self.constants.is_some())?;
                if self.kind == NonlinearityKind::Prototype {
                    NonlinearitySpec::prototype(r, theta)
                } else {
                    NonlinearitySpec::zero_coupling(r, theta)
                }
            }
            NonlinearityKind::Oscillatory => {
                unused("g_scale/h_scale", scales)?;
                unused("constants", self.constants.is_some())?;
                NonlinearitySpec::oscillatory_constant(r, theta, self.v1.unwrap_or(1.0), self.v2.unwrap_or(1.0))
            }
            NonlinearityKind::ScaledPrototype => {
                unused("v1/v2", weights)?;
                let constants = self.constants.unwrap_or(GrowthConstants::UNIT);
                scaled_prototype(r, theta, self.g_scale.unwrap_or(1.0), self.h_scale.unwrap_or(1.0), constants)
            }
        };
        spec.map_err(|e| CliError::config(e.to_string()))
    }
}

fn scaled_prototype(
    r: f64,
    theta: f64,
    gs: f64,
    hs: f64,
    constants: GrowthConstants,
) -> kmslab::Result<NonlinearitySpec> {
    let g: Evaluator = Arc::new(move |_, s, t| gs * s.signum() * pow_abs(s, r - 1.0) * pow_abs(t, theta + 1.0));
    let h: Evaluator = Arc::new(move |_, s, t| hs * t.signum() * pow_abs(s, r) * pow_abs(t, theta));
    let ds: Evaluator = Arc::new(move |_, s, t| gs * (r - 1.0) * pow_abs(s, r - 2.0) * pow_abs(t, theta + 1.0));
    let prim: Evaluator = Arc::new(move |_, s, t| gs * pow_abs(s, r) * pow_abs(t, theta + 1.0) / r);
    Ok(NonlinearitySpec::custom(r, theta, g, h, constants)?
        .with_g_derivative(ds)
        .with_primitive(prim)
        .with_label("scaled_prototype"))
}
