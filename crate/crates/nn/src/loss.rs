//! Scalar losses with gradients. Reductions accumulate in f64 so batch means
//! stay stable regardless of batch size.

use ndarray::{ArrayD, Axis, Ix2};

use crate::error::NnError;
use crate::layer::Tensor;

/// Softmax cross-entropy averaged over the batch. Returns the mean loss and
/// the gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    let l2 = logits
        .view()
        .into_dimensionality::<Ix2>()
        .map_err(|_| NnError::ShapeError(format!("expected (N, classes), got {:?}", logits.shape())))?;
    let (n, c) = l2.dim();
    if labels.len() != n {
        return Err(NnError::ShapeError(format!("{n} rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(NnError::ConfigError(format!("label {bad} out of {c} classes")));
    }
    let mut grad = ndarray::Array2::<f32>::zeros((n, c));
    let mut total = 0f64;
    for i in 0..n {
        let row = l2.row(i);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0f64;
        for &v in row.iter() {
            denom += ((v - max) as f64).exp();
        }
        total += denom.ln() - (row[labels[i]] - max) as f64;
        for j in 0..c {
            let p = (((row[j] - max) as f64).exp() / denom) as f32;
            grad[[i, j]] = (p - if j == labels[i] { 1.0 } else { 0.0 }) / n as f32;
        }
    }
    Ok((total / n as f64, grad.into_dyn()))
}

/// Row-wise argmax of the logits.
pub fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>, NnError> {
    let l2 = logits
        .view()
        .into_dimensionality::<Ix2>()
        .map_err(|_| NnError::ShapeError(format!("expected (N, classes), got {:?}", logits.shape())))?;
    Ok(l2
        .axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0usize, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv { (i, v) } else { (bi, bv) }
                })
                .0
        })
        .collect())
}

pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64, NnError> {
    let pred = argmax_rows(logits)?;
    if pred.len() != labels.len() {
        return Err(NnError::ShapeError("prediction/label count mismatch".into()));
    }
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::ShapeError(format!(
            "shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean over the batch of per-sample Euclidean norms ‖a_i - b_i‖ (axis 0 is
/// the batch). The gradient is with respect to `a`; samples with zero
/// distance contribute zero gradient.
pub fn euclidean_batch(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor), NnError> {
    check_same_shape(a, b)?;
    let n = a.shape()[0];
    if n == 0 {
        return Err(NnError::ShapeError("empty batch".into()));
    }
    let per = a.len() / n;
    let mut grad = ArrayD::<f32>::zeros(a.raw_dim());
    let af = a.as_standard_layout();
    let bf = b.as_standard_layout();
    let af = af.as_slice().unwrap();
    let bf = bf.as_slice().unwrap();
    let gf = grad.as_slice_mut().unwrap();
    let mut total = 0f64;
    for i in 0..n {
        let (s, e) = (i * per, (i + 1) * per);
        let mut sq = 0f64;
        for k in s..e {
            let d = (af[k] - bf[k]) as f64;
            sq += d * d;
        }
        let norm = sq.sqrt();
        total += norm;
        if norm > 1e-12 {
            let scale = (1.0 / (norm * n as f64)) as f32;
            for k in s..e {
                gf[k] = (af[k] - bf[k]) * scale;
            }
        }
    }
    Ok((total / n as f64, grad))
}

/// Mean over the batch of squared Euclidean norms ‖a_i - b_i‖².
pub fn squared_euclidean_batch(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor), NnError> {
    check_same_shape(a, b)?;
    let n = a.shape()[0];
    if n == 0 {
        return Err(NnError::ShapeError("empty batch".into()));
    }
    let mut total = 0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = (x - y) as f64;
        total += d * d;
    }
    let scale = 2.0 / n as f32;
    let mut grad = a - b;
    grad.mapv_inplace(|v| v * scale);
    Ok((total / n as f64, grad))
}
