//! Command-line runner: reads a TOML run configuration, calls the library
//! and writes CSV/JSON artifacts plus a digest manifest.
//!
//! Exit codes: 0 success, 1 configuration error, 2 inadmissible parameters,
//! 3 hypothesis failure, 4 solver non-convergence.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kmslab::KmsError;

pub mod commands;
pub mod config;
pub mod output;

use config::RunConfig;
use output::{Run, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INADMISSIBLE: i32 = 2;
pub const EXIT_HYPOTHESIS: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<KmsError> for CliError {
    fn from(e: KmsError) -> Self {
        let code = match &e {
            KmsError::Inadmissible(_) | KmsError::NotApplicable(_) => EXIT_INADMISSIBLE,
            KmsError::MaxIterations { .. } | KmsError::NonfiniteValue(_) | KmsError::LinearSolve(_) => {
                EXIT_NONCONVERGENCE
            }
            KmsError::InvalidParameter(_)
            | KmsError::InsufficientSweep { .. }
            | KmsError::GridMismatch
            | KmsError::NonVariational => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kmslab", version, about = "Experiments for coupled p-Laplacian systems with a nonlocal coefficient")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Parent of the run directory (default: `io.outdir`, else `runs`).
    #[arg(long)]
    pub outdir: Option<PathBuf>,
    /// Run directory name (default: `io.label`, else the command name).
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exponent thresholds, admissibility and regularizing zone.
    Zones(RunArgs),
    /// Randomized check of the growth hypotheses of the nonlinearity.
    CheckNl(RunArgs),
    /// One solve of the regularized system.
    Solve(RunArgs),
    /// Scaling sweep in the datum amplitude.
    Sweep(RunArgs),
    /// Solves along an increasing schedule of regularization levels.
    Continuation(RunArgs),
    /// Nontriviality or regularity probe.
    Probe(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Zones(_) => "zones",
            Command::CheckNl(_) => "check-nl",
            Command::Solve(_) => "solve",
            Command::Sweep(_) => "sweep",
            Command::Continuation(_) => "continuation",
            Command::Probe(_) => "probe",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Zones(a)
            | Command::CheckNl(a)
            | Command::Solve(a)
            | Command::Sweep(a)
            | Command::Continuation(a)
            | Command::Probe(a) => a,
        }
    }
}

/// What a command reports besides its artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub exit_code: i32,
    pub converged: Option<bool>,
}

impl Outcome {
    pub fn ok() -> Self {
        Self {
            exit_code: EXIT_OK,
            converged: None,
        }
    }

    pub fn solved(converged: bool) -> Self {
        Self {
            exit_code: if converged { EXIT_OK } else { EXIT_NONCONVERGENCE },
            converged: Some(converged),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("KMSLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::config(format!("KMSLAB_THREADS must be a positive integer, got {raw:?}")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one command and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.code == EXIT_CONFIG {
                eprintln!("usage: kmslab {} --config <path> [--outdir <path>] [--label <name>]", cli.command.name());
            }
            e.code
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let name = cli.command.name();
    let args = cli.command.args();
    let cfg = RunConfig::load(&args.config)?;
    commands::check_sections(name, &cfg)?;
    configure_threads()?;
    let outdir = args
        .outdir
        .clone()
        .or_else(|| cfg.io.outdir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let label = args
        .label
        .clone()
        .or_else(|| cfg.io.label.clone())
        .unwrap_or_else(|| name.to_string());
    let mut run = Run::create(&outdir, &label)?;

    let result = match &cli.command {
        Command::Zones(_) => commands::zones(&cfg, &mut run),
        Command::CheckNl(_) => commands::check_nl(&cfg, &mut run),
        Command::Solve(_) => commands::solve(&cfg, &mut run),
        Command::Sweep(_) => commands::sweep(&cfg, &mut run),
        Command::Continuation(_) => commands::continuation(&cfg, &mut run),
        Command::Probe(_) => commands::probe(&cfg, &mut run),
    };
    let (outcome, error) = match result {
        Ok(o) => (o, None),
        Err(e) => (
            Outcome {
                exit_code: e.code,
                converged: None,
            },
            Some(e),
        ),
    };
    if error.as_ref().is_some_and(|e| e.code == EXIT_CONFIG) && run.artifacts().is_empty() {
        let _ = std::fs::remove_dir_all(run.dir());
        return Err(error.expect("checked above"));
    }
    let manifest = RunManifest {
        label,
        command: name.to_string(),
        timestamp: output::timestamp(),
        library_version: kmslab::VERSION.to_string(),
        seed: cfg.seed,
        exit_code: outcome.exit_code,
        converged: outcome.converged,
        config: serde_json::to_value(&cfg).map_err(|e| CliError::config(e.to_string()))?,
        artifacts: Vec::new(),
    };
    let path = run.finish(manifest)?;
    println!("manifest: {}", path.display());
    if let Some(e) = error {
        eprintln!("error: {e}");
    }
    Ok(outcome.exit_code)
}
