use thiserror::Error;

/// Errors produced by the curvature-learning routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The input lies outside the domain of the operation (e.g. a non-SPD matrix).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-enforced precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An eigenvalue update produced a non-positive entry.
    #[error("positivity lost: {0}")]
    Positivity(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The black-box objective returned a non-finite value.
    #[error("objective returned {value} at {point:?}")]
    Evaluation { point: Vec<f64>, value: f64 },

    #[error("refused: {0}")]
    Refused(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
