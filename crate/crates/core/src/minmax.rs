//! Per-dimension min-max normalization of embeddings. Normalization is
//! always explicit: the store keeps raw values and callers decide when to
//! apply fitted parameters.

use crate::error::CoreError;
use crate::types::{EmbeddingRecord, NormalizationParams};

/// Fits per-dimension extrema over a non-empty, uniform-length set.
pub fn minmax_fit(embeddings: &[EmbeddingRecord]) -> Result<NormalizationParams, CoreError> {
    minmax_fit_vecs(embeddings.iter().map(|e| e.vector.as_slice()))
}

/// Same as [`minmax_fit`] but over raw vectors.
pub fn minmax_fit_vecs<'a, I>(vectors: I) -> Result<NormalizationParams, CoreError>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut iter = vectors.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| CoreError::InvalidInput("cannot fit normalization on an empty set".into()))?;
    let mut min = first.to_vec();
    let mut max = first.to_vec();
    for v in iter {
        if v.len() != min.len() {
            return Err(CoreError::LengthMismatch {
                expected: min.len(),
                got: v.len(),
            });
        }
        for (i, &x) in v.iter().enumerate() {
            if x < min[i] {
                min[i] = x;
            }
            if x > max[i] {
                max[i] = x;
            }
        }
    }
    NormalizationParams::new(min, max)
}

/// Applies fitted parameters to one embedding. Degenerate dimensions
/// (`min == max`) map to 0.5; inputs outside the fitted range land outside
/// `[0,1]`, which is expected for out-of-pool embeddings.
pub fn minmax_apply(
    embedding: &EmbeddingRecord,
    params: &NormalizationParams,
) -> Result<EmbeddingRecord, CoreError> {
    let vector = minmax_apply_vec(&embedding.vector, params)?;
    let mut out = embedding.clone();
    out.vector = vector;
    Ok(out)
}

/// Vector-level variant of [`minmax_apply`].
pub fn minmax_apply_vec(
    vector: &[f32],
    params: &NormalizationParams,
) -> Result<Vec<f32>, CoreError> {
    if vector.len() != params.len() {
        return Err(CoreError::LengthMismatch {
            expected: params.len(),
            got: vector.len(),
        });
    }
    Ok(vector
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let span = params.max[i] - params.min[i];
            if span == 0.0 {
                0.5
            } else {
                (x - params.min[i]) / span
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Modality;

    fn rec(v: Vec<f32>) -> EmbeddingRecord {
        EmbeddingRecord::new(v, "m", "l", "s", "x", Modality::Generic).unwrap()
    }

    #[test]
    fn fit_two_vectors() {
        let params = minmax_fit(&[rec(vec![0.0, 2.0]), rec(vec![1.0, 4.0])]).unwrap();
        assert_eq!(params.min, vec![0.0, 2.0]);
        assert_eq!(params.max, vec![1.0, 4.0]);
    }

    #[test]
    fn fit_single_vector_degenerates() {
        let params = minmax_fit(&[rec(vec![3.0, -1.0])]).unwrap();
        assert_eq!(params.min, params.max);
    }

    #[test]
    fn fit_empty_rejected() {
        assert!(minmax_fit(&[]).is_err());
    }

    #[test]
    fn fit_mixed_lengths_rejected() {
        let e = minmax_fit(&[rec(vec![0.0]), rec(vec![0.0, 1.0])]);
        assert!(matches!(e, Err(CoreError::LengthMismatch { .. })));
    }

    #[test]
    fn apply_endpoints() {
        let params = minmax_fit(&[rec(vec![0.0, 2.0]), rec(vec![1.0, 4.0])]).unwrap();
        let lo = minmax_apply(&rec(vec![0.0, 2.0]), &params).unwrap();
        assert_eq!(lo.vector, vec![0.0, 0.0]);
        let hi = minmax_apply(&rec(vec![1.0, 4.0]), &params).unwrap();
        assert_eq!(hi.vector, vec![1.0, 1.0]);
    }

    #[test]
    fn constant_dimension_maps_to_half() {
        let params = minmax_fit(&[rec(vec![3.0]), rec(vec![3.0])]).unwrap();
        let out = minmax_apply(&rec(vec![3.0]), &params).unwrap();
        assert_eq!(out.vector, vec![0.5]);
    }

    /// Oracle: brute-force rescan of extrema after applying the fit, per
    /// dimension, on a pseudo-random batch.
    #[test]
    fn applied_fit_attains_unit_extrema() {
        // Simple LCG so the test has no RNG dependency.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f32 / (1u64 << 31) as f32) * 20.0 - 10.0
        };
        let records: Vec<EmbeddingRecord> = (0..100)
            .map(|_| rec((0..16).map(|_| next()).collect()))
            .collect();
        let params = minmax_fit(&records).unwrap();
        let applied: Vec<Vec<f32>> = records
            .iter()
            .map(|r| minmax_apply(r, &params).unwrap().vector)
            .collect();
        for d in 0..16 {
            let lo = applied.iter().map(|v| v[d]).fold(f32::INFINITY, f32::min);
            let hi = applied.iter().map(|v| v[d]).fold(f32::NEG_INFINITY, f32::max);
            assert!((lo - 0.0).abs() < 1e-6, "dim {d} min {lo}");
            assert!((hi - 1.0).abs() < 1e-6, "dim {d} max {hi}");
        }
    }
}
