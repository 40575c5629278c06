use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A Gaussian or mixture violates its invariants (asymmetric or
    /// non-positive-definite covariance, bad weights, empty mixture).
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// Operation called with inconsistent arguments (horizon mismatch,
    /// non-finite state, goal-set mismatch, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Scenario failed validation. Carries every problem found, not just
    /// the first.
    #[error("scenario validation failed:\n  {}", .0.join("\n  "))]
    InvalidScenario(Vec<String>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn invalid_distribution(msg: impl Into<String>) -> Self {
        Error::InvalidDistribution(msg.into())
    }
}
