//! Shared domain types for the embedding-inversion toolkit: embedding
//! records, image samples, attack-scenario descriptors, min-max
//! normalization, and the on-disk embedding store.

pub mod embedder;
pub mod error;
pub mod minmax;
pub mod seed;
pub mod store;
pub mod types;

pub use embedder::Embedder;
pub use error::CoreError;
pub use minmax::{minmax_apply, minmax_apply_vec, minmax_fit, minmax_fit_vecs};
pub use seed::derive_seed;
pub use store::{EmbeddingStore, ShardId, ShardWriter, StoreManifest};
pub use types::{
    AttackScenario, AttackerDataCondition, EmbeddingRecord, FtLevel, ImageSample, Modality,
    NormalizationParams,
};
