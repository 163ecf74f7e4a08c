use thiserror::Error;

/// Errors raised by the laboratory.
///
/// The variants are grouped so that front ends can map them onto distinct
/// exit statuses: configuration problems, mathematical refusals and numeric
/// failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("unbounded supremum: {0}")]
    Unbounded(String),

    #[error("sampling method error: {0}")]
    Method(String),

    #[error("construction failed at step {step}: {reason}")]
    Construction { step: usize, reason: String },

    #[error("backend incompatible with inputs: {0}")]
    Backend(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
