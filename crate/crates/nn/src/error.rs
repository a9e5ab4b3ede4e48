use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("invalid configuration: {0}")]
    ConfigError(String),
    #[error("numeric failure: {0}")]
    NumericError(String),
    #[error("weights format error: {0}")]
    FormatError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
