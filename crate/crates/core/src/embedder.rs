//! Abstraction over anything that maps an image to a feature vector.
//! Evaluation code works against this trait so that metric computation does
//! not depend on a concrete model implementation.

use crate::error::CoreError;
use crate::types::ImageSample;

pub trait Embedder {
    /// Stable identifier, typically `model_id@layer_id`.
    fn embedder_id(&self) -> String;

    fn embedding_length(&self) -> usize;

    fn embed(&self, image: &ImageSample) -> Result<Vec<f32>, CoreError>;

    fn embed_batch(&self, images: &[ImageSample]) -> Result<Vec<Vec<f32>>, CoreError> {
        images.iter().map(|img| self.embed(img)).collect()
    }
}
