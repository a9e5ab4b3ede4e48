//! Dataset ingestion, augmentation, preprocessing conditions and
//! attacker/target splits.

pub mod augment;
pub mod error;
pub mod imageio;
pub mod manifest;
pub mod preprocess;
pub mod split;
pub mod synth;

use invlab_core::ImageSample;

pub use augment::{augment, AugmentationPolicy, BackgroundFill};
pub use error::DataIoError;
pub use imageio::{load_png, resize_bilinear, save_png};
pub use manifest::{DatasetManifest, SubjectEntry};
pub use preprocess::{apply_preprocessing, canonical_positions, detect_fiducials, Pipeline};
pub use split::{split_disjoint, SplitOutcome};
pub use synth::{generate_dataset, generate_sample, generate_to_dir, SynthConfig};

/// Loads every image of a manifest, rescaled to `size` x `size`, in manifest
/// order. Sample ids are the root-relative file paths without extension.
pub fn load_dataset(
    manifest: &DatasetManifest,
    size: usize,
) -> Result<Vec<ImageSample>, DataIoError> {
    manifest.validate()?;
    let mut out = Vec::with_capacity(manifest.sample_count());
    for subject in &manifest.subjects {
        for file in &subject.files {
            let pixels = load_png(manifest.root.join(file))?;
            let pixels = resize_bilinear(&pixels, size, size);
            let sample_id = file.trim_end_matches(".png").to_string();
            out.push(ImageSample::new(
                pixels,
                subject.id.clone(),
                sample_id,
                manifest.preprocessing_tag.clone(),
            )?);
        }
    }
    Ok(out)
}

/// Stacks images of identical shape into an NCHW batch tensor.
pub fn images_to_nchw(images: &[ImageSample]) -> Result<ndarray::Array4<f32>, DataIoError> {
    let first = images.first().ok_or_else(|| {
        DataIoError::InvalidInput("cannot batch an empty image list".into())
    })?;
    let (h, w, c) = first.shape();
    let mut out = ndarray::Array4::<f32>::zeros((images.len(), c, h, w));
    for (n, img) in images.iter().enumerate() {
        if img.shape() != (h, w, c) {
            return Err(DataIoError::InvalidInput(format!(
                "image {} has shape {:?}, batch expects {:?}",
                img.sample_id,
                img.shape(),
                (h, w, c)
            )));
        }
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    out[[n, ch, i, j]] = img.pixels[[i, j, ch]];
                }
            }
        }
    }
    Ok(out)
}

/// Converts one NCHW slice back to an HWC pixel array, clamped to `[0,1]`.
pub fn nchw_to_pixels(batch: &ndarray::ArrayView4<f32>, n: usize) -> ndarray::Array3<f32> {
    let (_, c, h, w) = batch.dim();
    ndarray::Array3::from_shape_fn((h, w, c), |(i, j, ch)| {
        batch[[n, ch, i, j]].clamp(0.0, 1.0)
    })
}
