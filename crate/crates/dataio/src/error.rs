use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error("cannot ingest {path}: {detail}")]
    IngestError { path: String, detail: String },
    #[error("unsupported format: {0}")]
    FormatError(String),
    #[error("invalid augmentation policy: {0}")]
    PolicyError(String),
    #[error("preprocessing failed: {0}")]
    PreprocessError(String),
    #[error("cannot build split: {0}")]
    SplitError(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Core(#[from] invlab_core::CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
