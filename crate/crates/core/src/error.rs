use thiserror::Error;

/// Errors raised by the estimators, kernels and I/O routines.
#[derive(Debug, Error)]
pub enum SoirError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A relative error, correlation or measure is undefined because the
    /// reference quantity is constant or zero.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    /// `last_iterate` carries the final state of the iteration when useful.
    #[error("did not converge after {iterations} iterations: {message}")]
    NotConverged {
        iterations: usize,
        message: String,
        last_iterate: Option<Vec<f64>>,
    },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SoirError>;
