//! Embedding extraction at declared intermediate layers. Extraction runs in
//! inference mode and is a pure function of (weights, image).

use invlab_core::{CoreError, Embedder, EmbeddingRecord, ImageSample};
use invlab_nn::Tensor;
use ndarray::Array4;

use crate::error::ZooError;
use crate::registry::ExtractorHandle;

/// A handle fixed to one extraction layer, usable wherever a plain embedding
/// function is expected.
#[derive(Debug, Clone)]
pub struct EmbedderAt {
    handle: ExtractorHandle,
    layer_id: String,
    layer_index: usize,
    length: usize,
}

impl EmbedderAt {
    pub fn new(handle: ExtractorHandle, layer_id: &str) -> Result<Self, ZooError> {
        let ex = handle.spec.extraction_layer(layer_id)?.clone();
        Ok(Self {
            handle,
            layer_id: ex.layer_id,
            layer_index: ex.layer_index,
            length: ex.length,
        })
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn handle(&self) -> &ExtractorHandle {
        &self.handle
    }

    fn image_to_input(&self, image: &ImageSample) -> Result<Tensor, ZooError> {
        let (h, w, c) = image.shape();
        let spec = &self.handle.spec;
        if h != spec.input_size || w != spec.input_size || c != spec.input_channels {
            return Err(ZooError::ConfigError(format!(
                "image '{}' is {h}x{w}x{c}, extractor '{}' expects {}x{}x{}",
                image.sample_id,
                spec.model_id,
                spec.input_size,
                spec.input_size,
                spec.input_channels
            )));
        }
        let mut x = Array4::<f32>::zeros((1, c, h, w));
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    x[[0, ch, i, j]] = image.pixels[[i, j, ch]];
                }
            }
        }
        Ok(x.into_dyn())
    }

    /// Embeds a batch already shaped NCHW, one vector per leading index.
    pub fn embed_nchw(&self, batch: &Tensor) -> Result<Vec<Vec<f32>>, ZooError> {
        let (_, taps) = self
            .handle
            .network
            .forward_taps(batch, &[self.layer_index])?;
        let tap = &taps[0];
        let n = tap.shape()[0];
        let flat: usize = tap.shape()[1..].iter().product();
        if flat != self.length {
            return Err(ZooError::LayerError(format!(
                "layer '{}' produced length {flat}, spec declares {}",
                self.layer_id, self.length
            )));
        }
        let std = tap
            .to_shape((n, flat))
            .map_err(|e| ZooError::ConfigError(e.to_string()))?;
        Ok((0..n).map(|i| std.row(i).to_vec()).collect())
    }
}

impl Embedder for EmbedderAt {
    fn embedder_id(&self) -> String {
        format!("{}@{}", self.handle.spec.model_id, self.layer_id)
    }

    fn embedding_length(&self) -> usize {
        self.length
    }

    fn embed(&self, image: &ImageSample) -> Result<Vec<f32>, CoreError> {
        let x = self
            .image_to_input(image)
            .map_err(|e| CoreError::InvalidInput(e.to_string()))?;
        let mut rows = self
            .embed_nchw(&x)
            .map_err(|e| CoreError::InvalidInput(e.to_string()))?;
        Ok(rows.remove(0))
    }
}

/// One record per image at the given extraction layer, tagged with the
/// extractor's identity and modality.
pub fn extract_embeddings(
    handle: &ExtractorHandle,
    images: &[ImageSample],
    layer_id: &str,
) -> Result<Vec<EmbeddingRecord>, ZooError> {
    let embedder = EmbedderAt::new(handle.clone(), layer_id)?;
    let mut out = Vec::with_capacity(images.len());
    for image in images {
        let vector = embedder.embed(image)?;
        out.push(EmbeddingRecord::new(
            vector,
            handle.spec.model_id.clone(),
            layer_id,
            image.subject_id.clone(),
            image.sample_id.clone(),
            handle.spec.modality,
        )?);
    }
    Ok(out)
}
