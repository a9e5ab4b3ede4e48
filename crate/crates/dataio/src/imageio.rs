//! PNG decoding/encoding and float-precision resampling.

use std::path::Path;

use image::ImageReader;
use ndarray::Array3;

use crate::error::DataIoError;

/// Decodes a PNG into an (H, W, 3) array in [0,1]. Grayscale images are
/// replicated across channels.
pub fn load_png(path: impl AsRef<Path>) -> Result<Array3<f32>, DataIoError> {
    let path = path.as_ref();
    if path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
        != Some("png".into())
    {
        return Err(DataIoError::FormatError(format!(
            "only PNG images are supported, got {}",
            path.display()
        )));
    }
    let img = ImageReader::open(path)
        .map_err(|e| DataIoError::IngestError {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?
        .decode()
        .map_err(|e| DataIoError::IngestError {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut out = Array3::<f32>::zeros((h as usize, w as usize, 3));
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Writes an (H, W, 3) array in [0,1] as an 8-bit PNG.
pub fn save_png(path: impl AsRef<Path>, pixels: &Array3<f32>) -> Result<(), DataIoError> {
    let (h, w, c) = pixels.dim();
    if c != 3 {
        return Err(DataIoError::InvalidInput(format!("expected 3 channels, got {c}")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        for ch in 0..3 {
            let v = pixels[[y as usize, x as usize, ch]].clamp(0.0, 1.0);
            p.0[ch] = (v * 255.0).round() as u8;
        }
    }
    buf.save(path.as_ref()).map_err(|e| DataIoError::IngestError {
        path: path.as_ref().display().to_string(),
        detail: e.to_string(),
    })
}

/// Bilinear sample with clamp-to-edge semantics; coordinates are (row, col).
pub fn sample_bilinear(pixels: &Array3<f32>, y: f32, x: f32, channel: usize) -> f32 {
    let (h, w, _) = pixels.dim();
    let cl = |v: f32, hi: usize| v.clamp(0.0, (hi - 1) as f32);
    let y = cl(y, h);
    let x = cl(x, w);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f32, x - x0 as f32);
    let a = pixels[[y0, x0, channel]];
    let b = pixels[[y0, x1, channel]];
    let c = pixels[[y1, x0, channel]];
    let d = pixels[[y1, x1, channel]];
    a * (1.0 - fy) * (1.0 - fx) + b * (1.0 - fy) * fx + c * fy * (1.0 - fx) + d * fy * fx
}

/// Bilinear resize keeping float precision.
pub fn resize_bilinear(pixels: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, c) = pixels.dim();
    if (h, w) == (out_h, out_w) {
        return pixels.clone();
    }
    let mut out = Array3::<f32>::zeros((out_h, out_w, c));
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    for oy in 0..out_h {
        // Align pixel centers between the two grids.
        let y = (oy as f32 + 0.5) * sy - 0.5;
        for ox in 0..out_w {
            let x = (ox as f32 + 0.5) * sx - 0.5;
            for ch in 0..c {
                out[[oy, ox, ch]] = sample_bilinear(pixels, y, x, ch);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let mut img = Array3::<f32>::zeros((8, 8, 3));
        for ((y, x, c), v) in img.indexed_iter_mut() {
            *v = ((y * 8 + x) as f32 / 63.0 + c as f32 * 0.1).min(1.0);
        }
        save_png(&p, &img).unwrap();
        let back = load_png(&p).unwrap();
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn non_png_rejected() {
        assert!(matches!(
            load_png("whatever.jpg"),
            Err(DataIoError::FormatError(_))
        ));
    }

    #[test]
    fn identity_resize_is_exact() {
        let img = Array3::<f32>::from_shape_fn((5, 7, 3), |(y, x, c)| {
            (y + x + c) as f32 * 0.01
        });
        assert_eq!(resize_bilinear(&img, 5, 7), img);
    }

    #[test]
    fn constant_image_resizes_to_constant() {
        let img = Array3::<f32>::from_elem((10, 10, 3), 0.42);
        let out = resize_bilinear(&img, 23, 5);
        assert!(out.iter().all(|v| (v - 0.42).abs() < 1e-6));
    }
}
