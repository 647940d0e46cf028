use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes surfaced by the library.
///
/// The CLI maps `Config`-like variants to exit code 2 and numeric failures to 3;
/// see [`Error::is_numeric`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("negative value where a non-negative one is required: {0}")]
    Negative(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("period {period} is outside the demand horizon of {horizon} periods")]
    OutOfHorizon { period: usize, horizon: usize },
    #[error("state escaped the truncated state space: {0}")]
    StateOutOfBounds(String),
    #[error("value iteration did not converge after {iterations} iterations (span {span:e})")]
    NotConverged { iterations: usize, span: f64 },
    #[error("policy has no stationary cost: {0}")]
    Divergent(String),
    #[error("policy has {0} recurrent classes reachable from the start state")]
    MultipleRecurrentClasses(usize),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("not enough samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (divergence, non-finite loss, no convergence)
    /// as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::Divergent(_)
                | Error::NonFinite(_)
                | Error::MultipleRecurrentClasses(_)
                | Error::StateOutOfBounds(_)
        )
    }
}
