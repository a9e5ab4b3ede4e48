use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("data error: {0}")]
    DataError(String),
    #[error("embedding length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("config error: {0}")]
    ConfigError(String),
    #[error("training error: {0}")]
    TrainError(String),
    #[error(transparent)]
    Nn(#[from] invlab_nn::NnError),
    #[error(transparent)]
    Core(#[from] invlab_core::CoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
