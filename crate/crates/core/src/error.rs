use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum KmsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parameters are not admissible: {0}")]
    Inadmissible(String),

    #[error("nonlinearity has no closed-form primitive")]
    NonVariational,

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("maximum number of iterations ({iterations}) reached, residual {residual:e}")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("non-finite value encountered in {0}")]
    NonfiniteValue(String),

    #[error("linear solver failed: {0}")]
    LinearSolve(String),

    #[error("sweep needs at least {required} points, got {got}")]
    InsufficientSweep { required: usize, got: usize },

    #[error("not applicable: {0}")]
    NotApplicable(String),
}

pub type Result<T> = std::result::Result<T, KmsError>;
