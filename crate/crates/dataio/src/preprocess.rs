//! Keypoint-normalizing preprocessing pipelines.
//!
//! Desk-scale images carry three single-channel fiducial disks (red, green,
//! blue). Pipeline A solves the affine map taking the canonical keypoint
//! layout onto the detected one and resamples, so every output has keypoints
//! at the same positions. Pipeline B crops a padded box around the detected
//! keypoints without any geometric normalization.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use invlab_core::ImageSample;

use crate::error::DataIoError;
use crate::imageio::{resize_bilinear, sample_bilinear};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    PipelineA,
    PipelineB,
}

impl Pipeline {
    pub fn tag(&self) -> &'static str {
        match self {
            Pipeline::PipelineA => "pipeline-a",
            Pipeline::PipelineB => "pipeline-b",
        }
    }
}

/// Canonical keypoint layout for an H x W image: two upper markers and one
/// lower-center marker, as (row, col).
pub fn canonical_positions(h: usize, w: usize) -> [(f32, f32); 3] {
    let (hf, wf) = (h as f32, w as f32);
    [
        (0.25 * hf, 0.25 * wf),
        (0.25 * hf, 0.75 * wf),
        (0.80 * hf, 0.50 * wf),
    ]
}

/// Finds the three fiducial centers as score-weighted centroids. Marker k is
/// dominant in channel k; the score of a pixel is its channel value minus the
/// mean of the other two, which is zero for any gray content.
pub fn detect_fiducials(pixels: &Array3<f32>) -> Result<[(f32, f32); 3], DataIoError> {
    const THRESHOLD: f32 = 0.3;
    let (h, w, _) = pixels.dim();
    let mut centers = [(0f32, 0f32); 3];
    for marker in 0..3 {
        let (o1, o2) = ((marker + 1) % 3, (marker + 2) % 3);
        let mut wy = 0f64;
        let mut wx = 0f64;
        let mut total = 0f64;
        for y in 0..h {
            for x in 0..w {
                let score = pixels[[y, x, marker]]
                    - 0.5 * (pixels[[y, x, o1]] + pixels[[y, x, o2]]);
                if score > THRESHOLD {
                    let s = score as f64;
                    wy += s * y as f64;
                    wx += s * x as f64;
                    total += s;
                }
            }
        }
        if total <= 0.0 {
            return Err(DataIoError::PreprocessError(format!(
                "fiducial {marker} not found"
            )));
        }
        centers[marker] = ((wy / total) as f32, (wx / total) as f32);
    }
    Ok(centers)
}

/// Solves the affine map sending each `from` point to the matching `to`
/// point: row' = a*row + b*col + c, col' = d*row + e*col + f.
fn solve_affine(from: &[(f32, f32); 3], to: &[(f32, f32); 3]) -> Result<[f32; 6], DataIoError> {
    // One 3x3 solve per output coordinate, shared matrix.
    let m = [
        [from[0].0 as f64, from[0].1 as f64, 1.0],
        [from[1].0 as f64, from[1].1 as f64, 1.0],
        [from[2].0 as f64, from[2].1 as f64, 1.0],
    ];
    let solve = |rhs: [f64; 3]| -> Result<[f64; 3], DataIoError> {
        let mut a = [[0f64; 4]; 3];
        for i in 0..3 {
            a[i][..3].copy_from_slice(&m[i]);
            a[i][3] = rhs[i];
        }
        for col in 0..3 {
            let pivot = (col..3)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            if a[pivot][col].abs() < 1e-9 {
                return Err(DataIoError::PreprocessError(
                    "degenerate keypoint layout".into(),
                ));
            }
            a.swap(col, pivot);
            for row in 0..3 {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..4 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        Ok([a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]])
    };
    let rows = solve([to[0].0 as f64, to[1].0 as f64, to[2].0 as f64])?;
    let cols = solve([to[0].1 as f64, to[1].1 as f64, to[2].1 as f64])?;
    Ok([
        rows[0] as f32, rows[1] as f32, rows[2] as f32,
        cols[0] as f32, cols[1] as f32, cols[2] as f32,
    ])
}

fn warp_affine(pixels: &Array3<f32>, to_source: &[f32; 6]) -> Array3<f32> {
    let (h, w, c) = pixels.dim();
    let mut out = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            let sy = to_source[0] * y as f32 + to_source[1] * x as f32 + to_source[2];
            let sx = to_source[3] * y as f32 + to_source[4] * x as f32 + to_source[5];
            for ch in 0..c {
                out[[y, x, ch]] = sample_bilinear(pixels, sy, sx, ch);
            }
        }
    }
    out
}

/// Applies one of the two preprocessing pipelines and retags the sample.
pub fn apply_preprocessing(
    image: &ImageSample,
    pipeline: Pipeline,
) -> Result<ImageSample, DataIoError> {
    let (h, w, _) = image.pixels.dim();
    let detected = detect_fiducials(&image.pixels)?;
    let pixels = match pipeline {
        Pipeline::PipelineA => {
            let canonical = canonical_positions(h, w);
            // Sampling runs output -> source, so solve canonical -> detected.
            let to_source = solve_affine(&canonical, &detected)?;
            warp_affine(&image.pixels, &to_source)
        }
        Pipeline::PipelineB => {
            let ys: Vec<f32> = detected.iter().map(|p| p.0).collect();
            let xs: Vec<f32> = detected.iter().map(|p| p.1).collect();
            let (y0, y1) = (ys.iter().cloned().fold(f32::MAX, f32::min), ys.iter().cloned().fold(f32::MIN, f32::max));
            let (x0, x1) = (xs.iter().cloned().fold(f32::MAX, f32::min), xs.iter().cloned().fold(f32::MIN, f32::max));
            let pad_y = 0.35 * (y1 - y0).max(1.0);
            let pad_x = 0.35 * (x1 - x0).max(1.0);
            let ry0 = (y0 - pad_y).floor().max(0.0) as usize;
            let ry1 = ((y1 + pad_y).ceil() as usize + 1).min(h);
            let rx0 = (x0 - pad_x).floor().max(0.0) as usize;
            let rx1 = ((x1 + pad_x).ceil() as usize + 1).min(w);
            if ry1 <= ry0 + 1 || rx1 <= rx0 + 1 {
                return Err(DataIoError::PreprocessError("detected region is empty".into()));
            }
            let crop = image
                .pixels
                .slice(ndarray::s![ry0..ry1, rx0..rx1, ..])
                .to_owned();
            resize_bilinear(&crop, h, w)
        }
    };
    Ok(ImageSample::new(
        pixels.mapv(|v| v.clamp(0.0, 1.0)),
        image.subject_id.clone(),
        image.sample_id.clone(),
        pipeline.tag(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stamp_disk(pixels: &mut Array3<f32>, cy: f32, cx: f32, r: f32, channel: usize) {
        let (h, w, _) = pixels.dim();
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                if d2 <= r * r {
                    for c in 0..3 {
                        pixels[[y, x, c]] = if c == channel { 1.0 } else { 0.05 };
                    }
                }
            }
        }
    }

    fn marked_image(offsets: [(f32, f32); 3]) -> ImageSample {
        let mut pixels = Array3::<f32>::from_elem((64, 64, 3), 0.4);
        let canonical = canonical_positions(64, 64);
        for (i, ((cy, cx), (dy, dx))) in canonical.iter().zip(offsets).enumerate() {
            stamp_disk(&mut pixels, cy + dy, cx + dx, 2.5, i);
        }
        ImageSample::new(pixels, "s", "x", "raw").unwrap()
    }

    #[test]
    fn detection_finds_stamped_centers() {
        let img = marked_image([(0.0, 0.0); 3]);
        let found = detect_fiducials(&img.pixels).unwrap();
        for (f, c) in found.iter().zip(canonical_positions(64, 64)) {
            assert!((f.0 - c.0).abs() < 0.75 && (f.1 - c.1).abs() < 0.75);
        }
    }

    #[test]
    fn missing_marker_is_an_error() {
        let pixels = Array3::<f32>::from_elem((32, 32, 3), 0.5);
        let img = ImageSample::new(pixels, "s", "x", "raw").unwrap();
        assert!(matches!(
            apply_preprocessing(&img, Pipeline::PipelineA),
            Err(DataIoError::PreprocessError(_))
        ));
    }

    #[test]
    fn pipeline_a_restores_canonical_marker_positions() {
        let img = marked_image([(3.0, -2.0), (-2.0, 1.5), (2.0, 2.0)]);
        let out = apply_preprocessing(&img, Pipeline::PipelineA).unwrap();
        assert_eq!(out.preprocessing_tag, "pipeline-a");
        let found = detect_fiducials(&out.pixels).unwrap();
        for (f, c) in found.iter().zip(canonical_positions(64, 64)) {
            assert!(
                (f.0 - c.0).abs() < 1.0 && (f.1 - c.1).abs() < 1.0,
                "marker at {f:?}, canonical {c:?}"
            );
        }
    }

    #[test]
    fn pipelines_produce_different_content_and_tags() {
        let img = marked_image([(2.0, 2.0), (-1.0, 0.0), (0.0, -2.0)]);
        let a = apply_preprocessing(&img, Pipeline::PipelineA).unwrap();
        let b = apply_preprocessing(&img, Pipeline::PipelineB).unwrap();
        assert_ne!(a.preprocessing_tag, b.preprocessing_tag);
        assert_ne!(a.pixels, b.pixels);
    }

    #[test]
    fn affine_solver_recovers_known_map() {
        let from = [(1.0, 1.0), (1.0, 5.0), (6.0, 3.0)];
        // Pure translation by (2, -1).
        let to = [(3.0, 0.0), (3.0, 4.0), (8.0, 2.0)];
        let m = solve_affine(&from, &to).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-4 && m[1].abs() < 1e-4 && (m[2] - 2.0).abs() < 1e-4);
        assert!(m[3].abs() < 1e-4 && (m[4] - 1.0).abs() < 1e-4 && (m[5] + 1.0).abs() < 1e-4);
    }
}
