use thiserror::Error;

/// Errors raised anywhere in the pipeline, from tensor arithmetic up to file IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value encountered in {0}")]
    Numeric(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("value outside quantizer domain: {0}")]
    Domain(String),
    #[error("cannot encode level: {0}")]
    Encode(String),
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
