//! Spectral norms of the linear layer families: power iteration for dense
//! weights, and a Fourier-domain analysis for convolutions under circular
//! boundary conditions.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, ArrayView4};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::LipschitzError;

/// Fixed start-vector seed so repeated runs agree bit for bit.
const POWER_SEED: u64 = 0x51ed;
const POWER_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-9;

/// Largest singular value of a dense weight matrix by two-sided power
/// iteration, in double precision.
pub fn dense_spectral_norm(w: &ArrayView2<f32>) -> Result<f64, LipschitzError> {
    let (rows, cols) = w.dim();
    if rows == 0 || cols == 0 {
        return Err(LipschitzError::ShapeError(format!(
            "weight matrix {rows}x{cols} has an empty dimension"
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(LipschitzError::NumericError(
            "weight matrix has non-finite entries".into(),
        ));
    }
    let a = w.mapv(|v| v as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v: Array1<f64> =
        Array1::from_shape_fn(cols, |_| StandardNormal.sample(&mut rng));
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return Err(LipschitzError::NumericError("degenerate start vector".into()));
    }
    v /= norm;

    let mut sigma = 0.0f64;
    for _ in 0..POWER_ITERS {
        let u = a.dot(&v);
        let next = u.dot(&u).sqrt();
        if next <= f64::MIN_POSITIVE {
            return Ok(0.0);
        }
        let back = a.t().dot(&u) / next;
        let back_norm = back.dot(&back).sqrt();
        if back_norm <= f64::MIN_POSITIVE {
            return Ok(next);
        }
        v = back / back_norm;
        if (next - sigma).abs() <= POWER_TOL * next {
            return Ok(next);
        }
        sigma = next;
    }
    Ok(sigma)
}

fn dft2(grid: &mut [Complex64], h: usize, w: usize, planner: &mut FftPlanner<f64>) {
    let row_fft = planner.plan_fft_forward(w);
    for r in 0..h {
        row_fft.process(&mut grid[r * w..(r + 1) * w]);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex64::default(); h];
    for c in 0..w {
        for (r, slot) in col.iter_mut().enumerate() {
            *slot = grid[r * w + c];
        }
        col_fft.process(&mut col);
        for (r, value) in col.iter().enumerate() {
            grid[r * w + c] = *value;
        }
    }
}

/// Singular values of the circularly-padded, stride-1 convolution with the
/// given filter on an input of the given spatial size, sorted descending.
///
/// The operator block-diagonalizes over spatial frequencies: each frequency
/// contributes the singular values of the channel matrix formed by the 2-D
/// transforms of the per-channel-pair kernels. Filter layout is
/// `(out_c, in_c, kh, kw)`; swapping the first two axes transposes every
/// frequency matrix and leaves the values unchanged.
pub fn conv_singular_values(
    filter: &ArrayView4<f32>,
    input_hw: (usize, usize),
) -> Result<Vec<f64>, LipschitzError> {
    let (out_c, in_c, kh, kw) = filter.dim();
    let (h, w) = input_hw;
    if out_c == 0 || in_c == 0 || kh == 0 || kw == 0 {
        return Err(LipschitzError::ShapeError("empty filter".into()));
    }
    if kh > h || kw > w {
        return Err(LipschitzError::ShapeError(format!(
            "{kh}x{kw} filter exceeds the {h}x{w} input"
        )));
    }
    if filter.iter().any(|v| !v.is_finite()) {
        return Err(LipschitzError::NumericError(
            "filter has non-finite entries".into(),
        ));
    }

    let mut planner = FftPlanner::<f64>::new();
    let mut spectra = Vec::with_capacity(out_c * in_c);
    for o in 0..out_c {
        for i in 0..in_c {
            let mut grid = vec![Complex64::default(); h * w];
            for dy in 0..kh {
                for dx in 0..kw {
                    grid[dy * w + dx] = Complex64::new(filter[[o, i, dy, dx]] as f64, 0.0);
                }
            }
            dft2(&mut grid, h, w, &mut planner);
            spectra.push(grid);
        }
    }

    let mut values = Vec::with_capacity(h * w * out_c.min(in_c));
    for f in 0..h * w {
        let m = DMatrix::from_fn(out_c, in_c, |o, i| spectra[o * in_c + i][f]);
        values.extend(m.singular_values().iter().copied());
    }
    values.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    Ok(values)
}

/// Lipschitz bound for a transpose convolution, filter layout
/// `(in_c, out_c, kh, kw)`.
///
/// Zero-interleaving the input by the stride is an isometry, after which
/// the layer is a stride-1 convolution on a canvas of
/// `(h-1)*stride + k` per side; padding and output padding only drop or
/// append rows of that operator, which cannot raise the norm. The canvas
/// is exactly large enough that the circular spectrum dominates the
/// zero-padded map.
pub fn transpose_conv_lipschitz(
    filter: &ArrayView4<f32>,
    stride: usize,
    input_hw: (usize, usize),
) -> Result<f64, LipschitzError> {
    if stride == 0 {
        return Err(LipschitzError::ShapeError("stride must be positive".into()));
    }
    let (h, w) = input_hw;
    if h == 0 || w == 0 {
        return Err(LipschitzError::ShapeError("empty input".into()));
    }
    let (_, _, kh, kw) = filter.dim();
    let canvas = ((h - 1) * stride + kh, (w - 1) * stride + kw);
    let values = conv_singular_values(filter, canvas)?;
    Ok(values[0])
}
