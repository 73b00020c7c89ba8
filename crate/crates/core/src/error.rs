use thiserror::Error;

/// Errors produced by the estimation routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("singular normal equations")]
    Singular,

    #[error("loss overflow")]
    LossOverflow,

    #[error("non-finite objective value")]
    NonFiniteObjective,

    #[error("{solver} did not converge after {iterations} iterations (last step/gradient norm {residual:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("no rank detected: largest singular value {sigma_max:.6} is below threshold {threshold:.6}")]
    NoRankDetected {
        singular_values: Vec<f64>,
        threshold: f64,
        sigma_max: f64,
    },

    #[error("empty subset")]
    EmptySubset,
}

pub type Result<T> = std::result::Result<T, Error>;
