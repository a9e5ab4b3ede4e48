use thiserror::Error;

use crate::train::EpochTrace;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("spec error: {0}")]
    SpecError(String),

    /// Requested feature tap not exposed by the extractor.
    #[error("unknown layer: {0}")]
    LayerError(String),

    #[error("embedding length {got} does not match decoder input {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("config error: {0}")]
    ConfigError(String),

    /// Loss became non-finite; the trace covers the completed epochs.
    #[error("training diverged at epoch {epoch}: loss became non-finite")]
    Diverged { epoch: usize, trace: Vec<EpochTrace> },

    #[error(transparent)]
    Nn(#[from] invlab_nn::NnError),

    #[error(transparent)]
    Zoo(#[from] invlab_zoo::ZooError),

    #[error(transparent)]
    Core(#[from] invlab_core::CoreError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
