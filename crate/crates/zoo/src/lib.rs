//! Extractor zoo: build, train, fine-tune, persist, and evaluate the
//! convolutional embedding extractors that attacks are mounted against.
//!
//! A zoo is a directory of registered extractors, each described by a
//! serializable [`ExtractorSpec`] and a weights file with a recorded
//! checksum. Handles opened from the registry embed images at named
//! extraction layers and plug into the evaluation toolkit via the shared
//! embedder interface.

mod embed;
mod error;
mod eval;
mod finetune;
mod registry;
mod spec;
mod train;

pub use embed::{extract_embeddings, EmbedderAt};
pub use error::ZooError;
pub use eval::{evaluate_recognition, RecognitionReport};
pub use finetune::{
    desk_ladder, embedding_displacement, fine_tune, validate_ladder, FineTuneConfig,
    FineTuneReport,
};
pub use registry::{ExtractorHandle, Registry};
pub use spec::{
    cnn_spec, desk_pool, varied_fleet, ActChoice, ArchBlock, AttributeLabels, CnnKnobs,
    Downsample, ExtractionLayer, ExtractorSpec,
};
pub use train::{train_classifier, train_extractor, EpochStats, LabelMap, TrainConfig, TrainReport};
