//! Numerical laboratory for coupled quasilinear p-Laplacian systems with a
//! nonlocal (Kirchhoff-type) diffusion coefficient
//!
//! ```text
//! -div(A |grad u|^{p-2} grad u) + g(x,u,v) = f
//! -div(A |grad v|^{p-2} grad v) = h(x,u,v)
//! A = ||grad u||_p^p + ||grad v||_p^p
//! ```
//!
//! with homogeneous Dirichlet data. The crate computes the exponent
//! thresholds of the existence and regularity theory, checks growth
//! hypotheses on the couplings, solves truncated versions of the system on
//! structured grids and runs scaling experiments against the a priori bounds.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discretization;
pub mod error;
pub mod experiments;
pub mod exponents;
pub mod linalg;
pub mod nonlinearity;
pub mod plaplace;
pub mod solver;

pub use discretization::{
    gradient_at_faces, lq_norm, nonlocal_coefficient, w1p_seminorm, weak_residual_dual_norm,
    weighted_plap_residual, Equation, Field, Grid,
};
pub use error::{KmsError, Result};
pub use experiments::{
    apriori_scaling_sweep, linf_scaling_probe, mixed_energy, nontriviality_check, proof_chain_check,
    regularity_probe, tail_uniform_integrability, Datum, EstimateReport, TailProduct, Verdict,
};
pub use exponents::{
    admissibility_check, eta_threshold_exponent, holder_conjugate, regularized_exponents, sigma_exponent,
    sobolev_conjugate, zone_classify, AdmissibilityVerdict, ProblemParams, Zone, ZoneReport,
};
pub use nonlinearity::{verify_growth_bounds, GrowthConstants, HypothesisReport, NonlinearitySpec};
pub use plaplace::{
    flux, monotonicity_constants, norm_monotonicity_check, pointwise_monotonicity_gap, regularized_flux,
    MonotonicityConstants,
};
pub use solver::{
    inner_scalar_solve, k_continuation, linf_report, picard_system_solve, LinfVerdict, SolveConfig,
    SolveResult, SolveStatus,
};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
