use thiserror::Error;

#[derive(Debug, Error)]
pub enum LipschitzError {
    #[error("numeric failure: {0}")]
    NumericError(String),
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("no bound rule for layer kind '{0}'")]
    UnsupportedLayer(String),
    #[error("config error: {0}")]
    ConfigError(String),
    #[error(transparent)]
    Nn(#[from] invlab_nn::NnError),
}
