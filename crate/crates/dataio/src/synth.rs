//! Synthetic desk-scale imagery.
//!
//! Each identity is an analytic texture (ellipse arrangement plus an
//! oriented luminance grating, or ridge rings for fingerprint-style data)
//! rendered under a per-sample affine jitter. Three single-channel fiducial
//! disks are stamped at the jittered canonical keypoint positions so the
//! preprocessing pipelines can re-align samples. Content colors keep their
//! channel spread small, which keeps fiducial detection unambiguous.

use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use invlab_core::{derive_seed, ImageSample, Modality};

use crate::error::DataIoError;
use crate::manifest::{DatasetManifest, SubjectEntry};
use crate::preprocess::canonical_positions;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub image_size: usize,
    pub modality: Modality,
    pub seed: u64,
    /// Rotation jitter bound in degrees.
    pub jitter_deg: f32,
    /// Translation jitter bound as a fraction of the image size.
    pub jitter_translate: f32,
    /// Scale jitter bound around 1.
    pub jitter_scale: f32,
}

impl SynthConfig {
    pub fn desk_default(identities: usize, samples_per_identity: usize, seed: u64) -> Self {
        Self {
            identities,
            samples_per_identity,
            image_size: 64,
            modality: Modality::Face,
            seed,
            jitter_deg: 8.0,
            jitter_translate: 0.05,
            jitter_scale: 0.08,
        }
    }

    pub fn validate(&self) -> Result<(), DataIoError> {
        if self.identities == 0 || self.samples_per_identity == 0 {
            return Err(DataIoError::InvalidInput("need at least one identity and sample".into()));
        }
        if self.image_size < 16 {
            return Err(DataIoError::InvalidInput("image_size must be at least 16".into()));
        }
        Ok(())
    }
}

struct Blob {
    cy: f32,
    cx: f32,
    ry: f32,
    rx: f32,
    angle: f32,
    color: [f32; 3],
}

struct IdentityPattern {
    background: f32,
    blobs: Vec<Blob>,
    grating_freq: f32,
    grating_angle: f32,
    grating_phase: f32,
    grating_amp: f32,
    ridge: bool,
    ridge_cy: f32,
    ridge_cx: f32,
    ridge_freq: f32,
}

/// Draws a color with channel spread at most 0.22 so no content pixel can
/// mimic a fiducial.
fn muted_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let base = rng.gen_range(0.25..0.75);
    let mut c = [0f32; 3];
    for v in &mut c {
        *v = (base + rng.gen_range(-0.11..0.11f32)).clamp(0.02, 0.98);
    }
    c
}

fn identity_pattern(cfg: &SynthConfig, identity: usize) -> IdentityPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("identity-{identity}")));
    let s = cfg.image_size as f32;
    if cfg.modality == Modality::Fingerprint {
        return IdentityPattern {
            background: 1.0,
            blobs: Vec::new(),
            grating_freq: 0.0,
            grating_angle: rng.gen_range(0.0..std::f32::consts::PI),
            grating_phase: rng.gen_range(0.0..std::f32::consts::TAU),
            grating_amp: rng.gen_range(0.15..0.3),
            ridge: true,
            ridge_cy: s * rng.gen_range(0.35..0.65),
            ridge_cx: s * rng.gen_range(0.35..0.65),
            ridge_freq: rng.gen_range(4.0..9.0),
        };
    }
    let mut blobs = Vec::new();
    // One large oval plus two to three small features.
    blobs.push(Blob {
        cy: s * rng.gen_range(0.42..0.58),
        cx: s * rng.gen_range(0.42..0.58),
        ry: s * rng.gen_range(0.18..0.3),
        rx: s * rng.gen_range(0.14..0.26),
        angle: rng.gen_range(0.0..std::f32::consts::PI),
        color: muted_color(&mut rng),
    });
    for _ in 0..rng.gen_range(2..=3usize) {
        blobs.push(Blob {
            cy: s * rng.gen_range(0.3..0.7),
            cx: s * rng.gen_range(0.3..0.7),
            ry: s * rng.gen_range(0.04..0.1),
            rx: s * rng.gen_range(0.04..0.1),
            angle: rng.gen_range(0.0..std::f32::consts::PI),
            color: muted_color(&mut rng),
        });
    }
    IdentityPattern {
        background: rng.gen_range(0.25..0.55),
        blobs,
        grating_freq: rng.gen_range(2.0..6.0),
        grating_angle: rng.gen_range(0.0..std::f32::consts::PI),
        grating_phase: rng.gen_range(0.0..std::f32::consts::TAU),
        grating_amp: rng.gen_range(0.05..0.12),
        ridge: false,
        ridge_cy: 0.0,
        ridge_cx: 0.0,
        ridge_freq: 0.0,
    }
}

/// Analytic texture value in canonical coordinates.
fn pattern_value(p: &IdentityPattern, size: f32, y: f32, x: f32) -> [f32; 3] {
    let mut out = [p.background; 3];
    if p.ridge {
        let dy = y - p.ridge_cy;
        let dx = x - p.ridge_cx;
        let r = (dy * dy + dx * dx).sqrt() / size;
        let swirl = (p.grating_angle + dy.atan2(dx)).sin() * 0.15;
        let wave = (r * p.ridge_freq * std::f32::consts::TAU + p.grating_phase + swirl).sin();
        // Soft-thresholded dark ridges on white.
        let ink = ((wave - 0.2) * 4.0).clamp(0.0, 1.0) * p.grating_amp * 3.0;
        for v in &mut out {
            *v = (1.0 - ink).clamp(0.0, 1.0);
        }
        return out;
    }
    for blob in &p.blobs {
        let (sin, cos) = blob.angle.sin_cos();
        let dy = y - blob.cy;
        let dx = x - blob.cx;
        let u = cos * dy + sin * dx;
        let v = -sin * dy + cos * dx;
        if (u / blob.ry).powi(2) + (v / blob.rx).powi(2) <= 1.0 {
            out = blob.color;
        }
    }
    // Luminance-only grating: equal push on all channels keeps fiducial
    // scores at zero.
    let (sin, cos) = p.grating_angle.sin_cos();
    let phase = (y * cos + x * sin) / size * p.grating_freq * std::f32::consts::TAU
        + p.grating_phase;
    let g = p.grating_amp * phase.sin();
    for v in &mut out {
        *v = (*v + g).clamp(0.0, 1.0);
    }
    out
}

/// Renders one sample of one identity. Pure function of the configuration
/// and the two indices.
pub fn generate_sample(cfg: &SynthConfig, identity: usize, sample: usize) -> ImageSample {
    let pattern = identity_pattern(cfg, identity);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        &format!("sample-{identity}-{sample}"),
    ));
    let size = cfg.image_size;
    let sf = size as f32;
    let angle = rng.gen_range(-cfg.jitter_deg..=cfg.jitter_deg).to_radians();
    let scale = 1.0 + rng.gen_range(-cfg.jitter_scale..=cfg.jitter_scale);
    let ty = sf * rng.gen_range(-cfg.jitter_translate..=cfg.jitter_translate);
    let tx = sf * rng.gen_range(-cfg.jitter_translate..=cfg.jitter_translate);
    let (cy, cx) = (sf / 2.0, sf / 2.0);
    let (sin, cos) = angle.sin_cos();

    // Forward map: rotate and scale about the center, then translate.
    let fwd = |y: f32, x: f32| -> (f32, f32) {
        let dy = y - cy;
        let dx = x - cx;
        (
            scale * (cos * dy - sin * dx) + cy + ty,
            scale * (sin * dy + cos * dx) + cx + tx,
        )
    };
    let inv = |y: f32, x: f32| -> (f32, f32) {
        let dy = (y - cy - ty) / scale;
        let dx = (x - cx - tx) / scale;
        (cos * dy + sin * dx + cy, -sin * dy + cos * dx + cx)
    };

    let mut pixels = Array3::<f32>::zeros((size, size, 3));
    for y in 0..size {
        for x in 0..size {
            let (sy, sx) = inv(y as f32, x as f32);
            let v = pattern_value(&pattern, sf, sy, sx);
            for c in 0..3 {
                let noise = rng.gen_range(-0.015..0.015f32);
                pixels[[y, x, c]] = (v[c] + noise).clamp(0.0, 1.0);
            }
        }
    }

    // Fiducials follow the same jitter so alignment can undo it.
    let radius = (sf / 24.0).max(2.0);
    for (marker, (ky, kx)) in canonical_positions(size, size).iter().enumerate() {
        let (my, mx) = fwd(*ky, *kx);
        let r2 = radius * radius;
        let y0 = ((my - radius).floor().max(0.0)) as usize;
        let y1 = (((my + radius).ceil() as usize) + 1).min(size);
        let x0 = ((mx - radius).floor().max(0.0)) as usize;
        let x1 = (((mx + radius).ceil() as usize) + 1).min(size);
        for y in y0..y1 {
            for x in x0..x1 {
                let d2 = (y as f32 - my).powi(2) + (x as f32 - mx).powi(2);
                if d2 <= r2 {
                    for c in 0..3 {
                        pixels[[y, x, c]] = if c == marker { 0.95 } else { 0.06 };
                    }
                }
            }
        }
    }

    ImageSample::new(
        pixels,
        format!("subject_{identity:03}"),
        format!("sample_{sample:03}"),
        "raw",
    )
    .expect("generated pixels are in range")
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<ImageSample>, DataIoError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.identities * cfg.samples_per_identity);
    for i in 0..cfg.identities {
        for j in 0..cfg.samples_per_identity {
            out.push(generate_sample(cfg, i, j));
        }
    }
    Ok(out)
}

/// Renders the dataset as PNG files plus a manifest at `dir/manifest.json`.
pub fn generate_to_dir(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<DatasetManifest, DataIoError> {
    cfg.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut subjects = Vec::with_capacity(cfg.identities);
    for i in 0..cfg.identities {
        let subject_id = format!("subject_{i:03}");
        std::fs::create_dir_all(dir.join(&subject_id))?;
        let mut files = Vec::with_capacity(cfg.samples_per_identity);
        for j in 0..cfg.samples_per_identity {
            let sample = generate_sample(cfg, i, j);
            let rel = format!("{subject_id}/sample_{j:03}.png");
            crate::imageio::save_png(dir.join(&rel), &sample.pixels)?;
            files.push(rel);
        }
        subjects.push(SubjectEntry { id: subject_id, files });
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        modality: cfg.modality,
        image_size: cfg.image_size,
        preprocessing_tag: "raw".into(),
        subjects,
    };
    let mut on_disk = manifest.clone();
    on_disk.root = ".".into();
    on_disk.save(dir.join("manifest.json"))?;
    Ok(manifest)
}
