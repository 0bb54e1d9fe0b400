use thiserror::Error;

/// Errors raised by the watermarking toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("fan-out budget exceeded: {requested} raw samples per chunk > budget {budget}")]
    BudgetExceeded { requested: u128, budget: u64 },

    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Failure while drawing from a sequence sampler.
#[derive(Debug, Error)]
pub enum SamplerError {
    /// Transport-level failure (connection refused, child exited, malformed reply).
    /// These are retried by the adapters before surfacing.
    #[error("transport failure: {0}")]
    Transport(String),

    /// The backend answered but the answer violates the sampler contract.
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
}

impl SamplerError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, SamplerError::Transport(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
