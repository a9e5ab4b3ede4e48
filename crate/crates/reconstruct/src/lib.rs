//! Embedding-to-image decoders: expanding transpose-convolutional networks
//! trained to invert a frozen feature extractor under a combined
//! pixel/perceptual loss.

mod decoder;
mod error;
mod loss;
mod search;
mod spec;
mod train;

pub use decoder::{build_reconstructor, reconstruct, ReconstructorHandle};
pub use error::ReconError;
pub use loss::{
    eligible_perceptual_layers, normalize_layer_weights, reconstruction_loss,
    reconstruction_loss_grad, LayerTerm, LossConfig,
};
pub use search::{search_layer_subset, SubsetSearchOutcome};
pub use spec::{
    desk_reconstructor, paper_reconstructor, ReconstructorSpec, OUTPUT_SIDE, SUPPORTED_LENGTHS,
};
pub use train::{train_reconstructor, DecoderTrainConfig, EpochTrace};
