//! Sample multiplication for small datasets: central rotation, translation,
//! crop-and-rescale, then rectangular obliteration, in that fixed order.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use invlab_core::{derive_seed, ImageSample};

use crate::error::DataIoError;
use crate::imageio::{resize_bilinear, sample_bilinear};

/// Fill for pixels exposed by geometry changes or obliteration patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundFill {
    /// Mean pixel value of the source image.
    #[default]
    MeanPixel,
    /// Constant white; suits ridge-on-white fingerprint imagery.
    White,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    /// Central rotation drawn from [-rotation_deg, rotation_deg].
    pub rotation_deg: f32,
    /// Integer translation drawn from [-translation_px, translation_px] per axis.
    pub translation_px: u32,
    /// Central crop fraction drawn from this range, then rescaled back.
    pub crop_fraction: (f32, f32),
    /// Number of obliteration patches drawn from this inclusive range.
    pub obliteration_count: (u32, u32),
    /// Obliteration patch side length drawn from this inclusive range.
    pub obliteration_size_px: (u32, u32),
    /// Variants produced per input image.
    pub multiplier: u32,
    pub seed: u64,
    #[serde(default)]
    pub background: BackgroundFill,
}

impl AugmentationPolicy {
    /// Identity policy: one variant, no changes.
    pub fn identity(seed: u64) -> Self {
        Self {
            rotation_deg: 0.0,
            translation_px: 0,
            crop_fraction: (1.0, 1.0),
            obliteration_count: (0, 0),
            obliteration_size_px: (0, 0),
            multiplier: 1,
            seed,
            background: BackgroundFill::MeanPixel,
        }
    }

    /// Fingerprint-style default synced to a one-image-to-fifty expansion.
    pub fn fingerprint_default(seed: u64) -> Self {
        Self {
            rotation_deg: 15.0,
            translation_px: 6,
            crop_fraction: (0.85, 1.0),
            obliteration_count: (0, 3),
            obliteration_size_px: (4, 10),
            multiplier: 50,
            seed,
            background: BackgroundFill::White,
        }
    }

    pub fn validate(&self) -> Result<(), DataIoError> {
        if self.multiplier == 0 {
            return Err(DataIoError::PolicyError("multiplier must be >= 1".into()));
        }
        if !(self.rotation_deg >= 0.0) {
            return Err(DataIoError::PolicyError("rotation range must be non-negative".into()));
        }
        let (lo, hi) = self.crop_fraction;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(DataIoError::PolicyError(format!(
                "crop fraction range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
            )));
        }
        if self.obliteration_count.0 > self.obliteration_count.1 {
            return Err(DataIoError::PolicyError("obliteration count range reversed".into()));
        }
        if self.obliteration_size_px.0 > self.obliteration_size_px.1 {
            return Err(DataIoError::PolicyError("obliteration size range reversed".into()));
        }
        Ok(())
    }
}

fn background_value(pixels: &Array3<f32>, fill: BackgroundFill) -> f32 {
    match fill {
        BackgroundFill::White => 1.0,
        BackgroundFill::MeanPixel => {
            let n = pixels.len().max(1);
            pixels.iter().map(|&v| v as f64).sum::<f64>() as f32 / n as f32
        }
    }
}

fn rotate_translate(
    pixels: &Array3<f32>,
    angle_rad: f32,
    dy: f32,
    dx: f32,
    bg: f32,
) -> Array3<f32> {
    if angle_rad == 0.0 && dy == 0.0 && dx == 0.0 {
        return pixels.clone();
    }
    let (h, w, c) = pixels.dim();
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let (sin, cos) = (-angle_rad).sin_cos();
    let mut out = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            // Inverse map: undo translation, then rotate about the center.
            let ty = y as f32 - dy - cy;
            let tx = x as f32 - dx - cx;
            let sy = cos * ty - sin * tx + cy;
            let sx = sin * ty + cos * tx + cx;
            let inside = sy >= -0.5 && sy <= h as f32 - 0.5 && sx >= -0.5 && sx <= w as f32 - 0.5;
            for ch in 0..c {
                out[[y, x, ch]] = if inside {
                    sample_bilinear(pixels, sy, sx, ch)
                } else {
                    bg
                };
            }
        }
    }
    out
}

fn central_crop_rescale(pixels: &Array3<f32>, fraction: f32) -> Result<Array3<f32>, DataIoError> {
    if fraction >= 1.0 {
        return Ok(pixels.clone());
    }
    let (h, w, _) = pixels.dim();
    let ch = (h as f32 * fraction).floor() as usize;
    let cw = (w as f32 * fraction).floor() as usize;
    if ch == 0 || cw == 0 {
        return Err(DataIoError::PolicyError(format!(
            "crop fraction {fraction} collapses a {h}x{w} image"
        )));
    }
    let y0 = (h - ch) / 2;
    let x0 = (w - cw) / 2;
    let window = pixels
        .slice(ndarray::s![y0..y0 + ch, x0..x0 + cw, ..])
        .to_owned();
    Ok(resize_bilinear(&window, h, w))
}

/// Produces `policy.multiplier` deterministic variants. The per-image stream
/// is seeded from (policy seed, sample id), so the result depends only on
/// the image, the policy and that pair.
pub fn augment(image: &ImageSample, policy: &AugmentationPolicy) -> Result<Vec<ImageSample>, DataIoError> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        policy.seed,
        &format!("{}/{}", image.subject_id, image.sample_id),
    ));
    let bg = background_value(&image.pixels, policy.background);
    let (h, w, _) = image.pixels.dim();
    let mut out = Vec::with_capacity(policy.multiplier as usize);
    for k in 0..policy.multiplier {
        let angle = if policy.rotation_deg > 0.0 {
            rng.gen_range(-policy.rotation_deg..=policy.rotation_deg).to_radians()
        } else {
            0.0
        };
        let t = policy.translation_px as i64;
        let (dy, dx) = if t > 0 {
            (rng.gen_range(-t..=t) as f32, rng.gen_range(-t..=t) as f32)
        } else {
            (0.0, 0.0)
        };
        let fraction = if policy.crop_fraction.0 < policy.crop_fraction.1 {
            rng.gen_range(policy.crop_fraction.0..=policy.crop_fraction.1)
        } else {
            policy.crop_fraction.0
        };

        let mut pixels = rotate_translate(&image.pixels, angle, dy, dx, bg);
        pixels = central_crop_rescale(&pixels, fraction)?;

        let patches = if policy.obliteration_count.1 > 0 {
            rng.gen_range(policy.obliteration_count.0..=policy.obliteration_count.1)
        } else {
            0
        };
        for _ in 0..patches {
            let side = if policy.obliteration_size_px.1 > 0 {
                rng.gen_range(policy.obliteration_size_px.0.max(1)..=policy.obliteration_size_px.1)
                    as usize
            } else {
                continue;
            };
            let side = side.min(h).min(w);
            let y0 = rng.gen_range(0..=(h - side));
            let x0 = rng.gen_range(0..=(w - side));
            pixels
                .slice_mut(ndarray::s![y0..y0 + side, x0..x0 + side, ..])
                .fill(bg);
        }

        pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
        out.push(ImageSample::new(
            pixels,
            image.subject_id.clone(),
            format!("{}#aug{k}", image.sample_id),
            image.preprocessing_tag.clone(),
        )?);
    }
    Ok(out)
}
