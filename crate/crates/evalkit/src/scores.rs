//! Score-level verification: similarity functions, threshold calibration,
//! and the TAR@FAR computation shared by every verification entry point.

use serde::{Deserialize, Serialize};

use crate::error::EvalError;

/// How a genuine verification pair was formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyMode {
    /// Reconstruction compared against the exact image it was derived from.
    SameImage,
    /// Reconstruction compared against a different image of the same subject.
    SameSubject,
}

/// Embedding-space similarity. Higher always means more similar, so distance
/// based measures are negated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    #[default]
    NegEuclidean,
    Cosine,
}

pub fn similarity(kind: Similarity, a: &[f32], b: &[f32]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::ShapeError(format!(
            "embedding lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(EvalError::InvalidInput("empty embeddings".into()));
    }
    match kind {
        Similarity::NegEuclidean => {
            let mut acc = 0.0f64;
            for i in 0..a.len() {
                let d = a[i] as f64 - b[i] as f64;
                acc += d * d;
            }
            Ok(-acc.sqrt())
        }
        Similarity::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
            for i in 0..a.len() {
                dot += a[i] as f64 * b[i] as f64;
                na += a[i] as f64 * a[i] as f64;
                nb += b[i] as f64 * b[i] as f64;
            }
            let den = na.sqrt() * nb.sqrt();
            if den < 1e-24 {
                return Ok(0.0);
            }
            Ok(dot / den)
        }
    }
}

/// Outcome of calibrating an acceptance threshold to a FAR target and
/// measuring the true accept rate at that threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    /// Pairing protocol behind the genuine scores. `None` when raw score
    /// lists were supplied directly.
    pub mode: Option<VerifyMode>,
    /// Acceptance rule is `score >= threshold`.
    pub threshold: f64,
    /// Fraction of genuine scores accepted.
    pub tar: f64,
    /// Fraction of calibration impostor scores accepted.
    pub far: f64,
    /// FAR the threshold was calibrated toward.
    pub far_target: f64,
    pub genuine_count: usize,
    pub impostor_count: usize,
}

impl VerificationResult {
    /// Whether the achieved FAR sits within the given relative tolerance of
    /// the calibration target. Attainable only when the impostor count is a
    /// reasonable multiple of `1/far_target`.
    pub fn calibration_within(&self, rel_tol: f64) -> bool {
        if self.far_target == 0.0 {
            return self.far == 0.0;
        }
        ((self.far - self.far_target) / self.far_target).abs() <= rel_tol
    }
}

/// Calibrates the acceptance threshold to the FAR target and reports the
/// true accept rate.
///
/// The threshold is the smallest observed score (from either list) that
/// accepts at most `far_target` of the impostors; if even the largest score
/// accepts too many, the threshold is `+inf` and nothing is accepted.
/// Raising `far_target` can only lower the threshold, so TAR is monotone
/// non-decreasing in the target.
pub fn tar_at_far(
    genuine: &[f64],
    impostor: &[f64],
    far_target: f64,
) -> Result<VerificationResult, EvalError> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(EvalError::EvalFailed(
            "tar_at_far needs non-empty genuine and impostor score lists".into(),
        ));
    }
    if !(0.0..=1.0).contains(&far_target) {
        return Err(EvalError::InvalidInput(format!(
            "far target {far_target} outside [0,1]"
        )));
    }
    if genuine
        .iter()
        .chain(impostor.iter())
        .any(|s| !s.is_finite())
    {
        return Err(EvalError::InvalidInput("non-finite score".into()));
    }

    let mut imp_sorted = impostor.to_vec();
    imp_sorted.sort_by(f64::total_cmp);
    let impostor_accept = |t: f64| -> f64 {
        let below = imp_sorted.partition_point(|&s| s < t);
        (imp_sorted.len() - below) as f64 / imp_sorted.len() as f64
    };

    let mut candidates: Vec<f64> = genuine.iter().chain(impostor.iter()).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // impostor_accept is non-increasing in t, so the first candidate that
    // satisfies the target is the smallest admissible threshold.
    let threshold = candidates
        .into_iter()
        .find(|&t| impostor_accept(t) <= far_target)
        .unwrap_or(f64::INFINITY);

    let far = impostor_accept(threshold);
    let tar = genuine.iter().filter(|&&g| g >= threshold).count() as f64 / genuine.len() as f64;

    Ok(VerificationResult {
        mode: None,
        threshold,
        tar,
        far,
        far_target,
        genuine_count: genuine.len(),
        impostor_count: impostor.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_scores_give_full_tar() {
        let genuine = vec![1.0; 40];
        let impostor = vec![0.0; 40];
        let r = tar_at_far(&genuine, &impostor, 0.01).unwrap();
        assert!(r.threshold > 0.0 && r.threshold <= 1.0, "threshold {}", r.threshold);
        assert_eq!(r.tar, 1.0);
        assert_eq!(r.far, 0.0);
        assert_eq!(r.genuine_count, 40);
        assert_eq!(r.impostor_count, 40);
    }

    #[test]
    fn identical_distributions_track_the_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let other: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        for far in [0.01, 0.05, 0.2] {
            let r = tar_at_far(&scores, &other, far).unwrap();
            assert!(
                (r.tar - far).abs() <= 0.02,
                "tar {} strayed from far target {far}",
                r.tar
            );
        }
    }

    #[test]
    fn tar_is_monotone_in_far_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let genuine: Vec<f64> = (0..300).map(|_| rng.gen::<f64>() + 0.3).collect();
            let impostor: Vec<f64> = (0..300).map(|_| rng.gen::<f64>()).collect();
            let mut prev = -1.0;
            for far in [0.0, 0.01, 0.05, 0.1, 0.3, 1.0] {
                let r = tar_at_far(&genuine, &impostor, far).unwrap();
                assert!(r.tar >= prev, "tar dropped from {prev} to {} at far {far}", r.tar);
                assert!(r.far <= far + 1e-12);
                prev = r.tar;
            }
        }
    }

    #[test]
    fn unattainable_target_accepts_nothing() {
        // Every candidate accepts all impostors, so calibration pushes the
        // threshold above every score.
        let r = tar_at_far(&[0.5, 0.6], &[0.9, 0.9, 0.9], 0.1).unwrap();
        assert_eq!(r.tar, 0.0);
        assert_eq!(r.far, 0.0);
        assert!(r.threshold.is_infinite());
    }

    #[test]
    fn empty_lists_rejected() {
        assert!(matches!(
            tar_at_far(&[], &[0.0], 0.1),
            Err(EvalError::EvalFailed(_))
        ));
        assert!(matches!(
            tar_at_far(&[1.0], &[], 0.1),
            Err(EvalError::EvalFailed(_))
        ));
    }

    #[test]
    fn similarity_orders_by_distance() {
        let a = vec![1.0f32, 0.0, 0.0];
        let near = vec![0.9f32, 0.1, 0.0];
        let far_v = vec![-1.0f32, 0.5, 0.5];
        let s_near = similarity(Similarity::NegEuclidean, &a, &near).unwrap();
        let s_far = similarity(Similarity::NegEuclidean, &a, &far_v).unwrap();
        assert!(s_near > s_far);
        assert_eq!(similarity(Similarity::NegEuclidean, &a, &a).unwrap(), 0.0);
        let c = similarity(Similarity::Cosine, &a, &a).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert!(similarity(Similarity::Cosine, &a, &near[..2].to_vec()).is_err());
    }
}
