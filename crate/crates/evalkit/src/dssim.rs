//! Structural dissimilarity between reconstructed and original images.
//!
//! SSIM is computed per channel over every dense 8x8 window (stride 1, no
//! Gaussian weighting), then averaged over windows and channels. DSSIM maps
//! that mean into `[0,1]` via `(1 - ssim) / 2`, so 0 means identical
//! structure and 0.5 means structurally unrelated.

use invlab_core::ImageSample;
use ndarray::{Array2, ArrayView2};

use crate::error::EvalError;

/// Window geometry and stabilization constants for SSIM.
#[derive(Debug, Clone, Copy)]
pub struct SsimParams {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        // Standard constants for a [0,1] dynamic range: (0.01 L)^2, (0.03 L)^2.
        Self {
            window: 8,
            c1: 0.01f64 * 0.01,
            c2: 0.03f64 * 0.03,
        }
    }
}

/// Mean SSIM between two images of identical shape.
pub fn ssim(a: &ImageSample, b: &ImageSample) -> Result<f64, EvalError> {
    ssim_pixels(&a.pixels.view(), &b.pixels.view(), SsimParams::default())
}

/// Structural dissimilarity `(1 - ssim) / 2`, clamped into `[0,1]`.
pub fn dssim(a: &ImageSample, b: &ImageSample) -> Result<f64, EvalError> {
    dssim_pixels(&a.pixels.view(), &b.pixels.view(), SsimParams::default())
}

pub fn dssim_pixels(
    a: &ndarray::ArrayView3<f32>,
    b: &ndarray::ArrayView3<f32>,
    params: SsimParams,
) -> Result<f64, EvalError> {
    let s = ssim_pixels(a, b, params)?;
    Ok(((1.0 - s) / 2.0).clamp(0.0, 1.0))
}

pub fn ssim_pixels(
    a: &ndarray::ArrayView3<f32>,
    b: &ndarray::ArrayView3<f32>,
    params: SsimParams,
) -> Result<f64, EvalError> {
    if a.dim() != b.dim() {
        return Err(EvalError::ShapeError(format!(
            "image shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (h, w, c) = a.dim();
    if params.window == 0 {
        return Err(EvalError::InvalidInput("ssim window must be > 0".into()));
    }
    if h < params.window || w < params.window {
        return Err(EvalError::ShapeError(format!(
            "image {h}x{w} smaller than {}x{} ssim window",
            params.window, params.window
        )));
    }
    let mut total = 0.0;
    for ch in 0..c {
        let av = a.index_axis(ndarray::Axis(2), ch);
        let bv = b.index_axis(ndarray::Axis(2), ch);
        total += channel_ssim(&av, &bv, params);
    }
    Ok(total / c as f64)
}

/// Summed-area table of `f(a, b)` with a zero border row and column, so any
/// window sum is four lookups.
fn sat(
    a: &ArrayView2<f32>,
    b: &ArrayView2<f32>,
    f: impl Fn(f64, f64) -> f64,
) -> Array2<f64> {
    let (h, w) = a.dim();
    let mut t = Array2::<f64>::zeros((h + 1, w + 1));
    for i in 0..h {
        for j in 0..w {
            let v = f(a[[i, j]] as f64, b[[i, j]] as f64);
            t[[i + 1, j + 1]] = v + t[[i, j + 1]] + t[[i + 1, j]] - t[[i, j]];
        }
    }
    t
}

fn window_sum(t: &Array2<f64>, i: usize, j: usize, k: usize) -> f64 {
    t[[i + k, j + k]] - t[[i, j + k]] - t[[i + k, j]] + t[[i, j]]
}

fn channel_ssim(a: &ArrayView2<f32>, b: &ArrayView2<f32>, params: SsimParams) -> f64 {
    let (h, w) = a.dim();
    let k = params.window;
    let n = (k * k) as f64;

    let sa = sat(a, b, |x, _| x);
    let sb = sat(a, b, |_, y| y);
    let saa = sat(a, b, |x, _| x * x);
    let sbb = sat(a, b, |_, y| y * y);
    let sab = sat(a, b, |x, y| x * y);

    let oh = h - k + 1;
    let ow = w - k + 1;
    let mut acc = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let mx = window_sum(&sa, i, j, k) / n;
            let my = window_sum(&sb, i, j, k) / n;
            let vx = window_sum(&saa, i, j, k) / n - mx * mx;
            let vy = window_sum(&sbb, i, j, k) / n - my * my;
            let cov = window_sum(&sab, i, j, k) / n - mx * my;
            let num = (2.0 * mx * my + params.c1) * (2.0 * cov + params.c2);
            let den = (mx * mx + my * my + params.c1) * (vx + vy + params.c2);
            acc += num / den;
        }
    }
    acc / (oh * ow) as f64
}
