use thiserror::Error;

#[derive(Debug, Error)]
pub enum ZooError {
    /// Spec/weights disagreement or a corrupted registry entry.
    #[error("registry error: {0}")]
    RegistryError(String),

    /// Extraction layer not declared by the spec.
    #[error("unknown layer: {0}")]
    LayerError(String),

    #[error("config error: {0}")]
    ConfigError(String),

    #[error("training failed: {0}")]
    TrainError(String),

    #[error(transparent)]
    Nn(#[from] invlab_nn::NnError),

    #[error(transparent)]
    Core(#[from] invlab_core::CoreError),

    #[error(transparent)]
    Eval(#[from] invlab_evalkit::EvalError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
