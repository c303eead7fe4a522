//! Error taxonomy shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Caller broke a shape or consistency contract.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A provider was asked for something it did not advertise.
    #[error("capability error: {0}")]
    Capability(String),
    /// The external score provider failed, died or timed out.
    #[error("provider error: {0}")]
    Provider(String),
    /// Malformed bytes on the score-provider wire.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// An estimator could not produce a value from the given data.
    #[error("estimation error: {0}")]
    Estimation(String),
    /// Linear algebra broke down (singular system, non-finite values).
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
