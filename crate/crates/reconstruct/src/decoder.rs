//! Decoder instances: deterministic initialization, persistence, and
//! embedding-to-image inference.

use std::fs;
use std::path::Path;

use invlab_core::{EmbeddingRecord, ImageSample};
use invlab_nn::{build_network, Network, Tensor};
use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::ReconError;
use crate::spec::{ReconstructorSpec, OUTPUT_SIDE};

#[derive(Debug, Clone)]
pub struct ReconstructorHandle {
    pub spec: ReconstructorSpec,
    pub network: Network,
    pub init_seed: u64,
}

impl ReconstructorHandle {
    pub fn param_count(&self) -> usize {
        self.network.param_count()
    }

    /// Writes `card.json` plus a binary weight blob into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), ReconError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let checksum = invlab_nn::io::save_weights(dir.join("weights.bin"), &self.network)?;
        let card = DecoderCard {
            spec: self.spec.clone(),
            init_seed: self.init_seed,
            weights_checksum: checksum,
        };
        fs::write(dir.join("card.json"), serde_json::to_vec_pretty(&card)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ReconError> {
        let dir = dir.as_ref();
        let card: DecoderCard = serde_json::from_slice(&fs::read(dir.join("card.json"))?)?;
        card.spec.validate()?;
        let mut network = build_network(&card.spec.layers, card.init_seed)?;
        invlab_nn::io::load_weights(dir.join("weights.bin"), &mut network)?;
        Ok(Self {
            spec: card.spec,
            network,
            init_seed: card.init_seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DecoderCard {
    spec: ReconstructorSpec,
    init_seed: u64,
    weights_checksum: String,
}

/// Materializes an initialized decoder; the same seed yields bit-identical
/// parameters.
pub fn build_reconstructor(
    spec: &ReconstructorSpec,
    seed: u64,
) -> Result<ReconstructorHandle, ReconError> {
    spec.validate()?;
    let network = build_network(&spec.layers, seed)?;
    Ok(ReconstructorHandle {
        spec: spec.clone(),
        network,
        init_seed: seed,
    })
}

/// Maps one embedding to an image; output pixels are clamped to `[0,1]`.
pub fn reconstruct(
    handle: &ReconstructorHandle,
    embedding: &EmbeddingRecord,
) -> Result<ImageSample, ReconError> {
    if embedding.vector.len() != handle.spec.input_length {
        return Err(ReconError::LengthMismatch {
            expected: handle.spec.input_length,
            got: embedding.vector.len(),
        });
    }
    let x = Array2::from_shape_vec((1, embedding.vector.len()), embedding.vector.clone())
        .expect("row vector")
        .into_dyn();
    let y = handle.network.forward(&x)?;
    let image = nchw_sample_to_image(
        &y,
        0,
        &embedding.subject_id,
        &embedding.sample_id,
        "reconstructed",
    )?;
    Ok(image)
}

/// Copies sample `i` of an NCHW batch into an HWC image, clamping to `[0,1]`.
pub(crate) fn nchw_sample_to_image(
    batch: &Tensor,
    i: usize,
    subject_id: &str,
    sample_id: &str,
    tag: &str,
) -> Result<ImageSample, ReconError> {
    let s = batch.shape();
    debug_assert_eq!(&s[1..], &[3, OUTPUT_SIDE, OUTPUT_SIDE]);
    let mut px = Array3::<f32>::zeros((s[2], s[3], s[1]));
    for c in 0..s[1] {
        for h in 0..s[2] {
            for w in 0..s[3] {
                px[[h, w, c]] = batch[[i, c, h, w]].clamp(0.0, 1.0);
            }
        }
    }
    Ok(ImageSample::new(px, subject_id, sample_id, tag)?)
}

/// Stacks images into an NCHW tensor, verifying a uniform shape.
pub(crate) fn images_to_nchw(images: &[&ImageSample]) -> Result<Tensor, ReconError> {
    let (h, w, c) = images
        .first()
        .ok_or_else(|| ReconError::ConfigError("empty image batch".into()))?
        .shape();
    let mut x = Array4::<f32>::zeros((images.len(), c, h, w));
    for (n, img) in images.iter().enumerate() {
        if img.shape() != (h, w, c) {
            return Err(ReconError::ConfigError(format!(
                "image '{}' is {:?}, batch expects {:?}",
                img.sample_id,
                img.shape(),
                (h, w, c)
            )));
        }
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    x[[n, ch, i, j]] = img.pixels[[i, j, ch]];
                }
            }
        }
    }
    Ok(x.into_dyn())
}
