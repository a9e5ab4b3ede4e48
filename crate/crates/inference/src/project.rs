//! Distance-preserving 2-D layout of embedding sets for cluster plots:
//! principal component projection computed matrix-free with seeded power
//! iteration, so layouts are deterministic per seed.

use invlab_core::EmbeddingRecord;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::InferError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub model_id: String,
}

const POWER_ITERS: usize = 300;
const CONVERGENCE: f64 = 1e-12;

/// One covariance-vector product without forming the covariance matrix:
/// (XᵀX/n)v, optionally deflated by an earlier component.
fn cov_apply(
    x: &Array2<f64>,
    v: &Array1<f64>,
    deflate: Option<(&Array1<f64>, f64)>,
) -> Array1<f64> {
    let xv = x.dot(v);
    let mut out = x.t().dot(&xv) / x.nrows() as f64;
    if let Some((u, lambda)) = deflate {
        let proj = u.dot(v);
        out -= &(u * (lambda * proj));
    }
    out
}

fn top_component(
    x: &Array2<f64>,
    deflate: Option<(&Array1<f64>, f64)>,
    rng: &mut ChaCha8Rng,
) -> (Array1<f64>, f64) {
    let d = x.ncols();
    let mut v = Array1::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0f64));
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v /= norm;
    }
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let next = cov_apply(x, &v, deflate);
        let next_norm = next.dot(&next).sqrt();
        if next_norm < 1e-300 {
            // Degenerate direction (zero variance); projections onto it are 0.
            return (Array1::zeros(d), 0.0);
        }
        let next = next / next_norm;
        let delta = (&next - &v).mapv(f64::abs).sum();
        v = next;
        lambda = next_norm;
        if delta < CONVERGENCE {
            break;
        }
    }
    (v, lambda)
}

/// Projects embeddings onto their top two principal directions. The layout
/// is deterministic for a fixed seed; identical embeddings land on
/// identical points.
pub fn project_2d(
    records: &[EmbeddingRecord],
    seed: u64,
) -> Result<Vec<ProjectedPoint>, InferError> {
    if records.len() < 2 {
        return Err(InferError::DataError(format!(
            "projection needs at least 2 embeddings, got {}",
            records.len()
        )));
    }
    let d = records[0].vector.len();
    for r in records {
        if r.vector.len() != d {
            return Err(InferError::LengthMismatch {
                expected: d,
                got: r.vector.len(),
            });
        }
    }
    let n = records.len();
    let mut x = Array2::<f64>::zeros((n, d));
    for (i, r) in records.iter().enumerate() {
        for (j, &v) in r.vector.iter().enumerate() {
            x[[i, j]] = v as f64;
        }
    }
    let mean = x.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    for mut row in x.rows_mut() {
        row -= &mean;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v1, lambda1) = top_component(&x, None, &mut rng);
    let (v2, _) = top_component(&x, Some((&v1, lambda1)), &mut rng);

    Ok(records
        .iter()
        .enumerate()
        .map(|(i, r)| ProjectedPoint {
            x: x.row(i).dot(&v1),
            y: x.row(i).dot(&v2),
            model_id: r.source_model_id.clone(),
        })
        .collect())
}
