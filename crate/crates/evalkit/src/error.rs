use thiserror::Error;

/// Errors produced while computing attack-quality metrics or writing reports.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("evaluation failed: {0}")]
    EvalFailed(String),

    #[error(transparent)]
    Core(#[from] invlab_core::CoreError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}
