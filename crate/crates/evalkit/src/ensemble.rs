//! Multi-embedding attacks: when the attacker holds N reconstructions per
//! subject (from N distinct observed embeddings), identification takes a
//! plurality vote over per-reconstruction predictions and verification
//! succeeds if any reconstruction is accepted. The acceptance threshold is
//! recalibrated on max-of-N impostor groups so the impostor any-accept rate
//! still meets the FAR target.

use invlab_core::{Embedder, ImageSample};

use crate::error::EvalError;
use crate::identify::CentroidHead;
use crate::scores::{tar_at_far, VerificationResult, VerifyMode};
use crate::verify::{embed_references, genuine_scores, impostor_scores, VerifyOptions};

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub n: usize,
    pub identification_accuracy: f64,
    pub identification_chance: f64,
    pub verification: VerificationResult,
    /// Subjects that contributed to the metrics.
    pub subjects_used: usize,
    /// Subjects dropped for holding fewer than N reconstructions.
    pub skipped_subjects: Vec<String>,
    /// Reconstructions with no same-image reference in the gallery.
    pub unpaired: Vec<(String, String)>,
}

/// Runs the N-reconstruction ensemble attack against a target system
/// `(phi, head)` with a reference gallery for verification.
///
/// With N=1 this reduces to the single-reconstruction metrics: the same
/// scoring, impostor sampling, and calibration code runs on the same values.
pub fn ensemble_attack(
    reconstructions_per_subject: &[(String, Vec<ImageSample>)],
    n: usize,
    phi: &dyn Embedder,
    head: &CentroidHead,
    references: &[ImageSample],
    far_target: f64,
    opts: &VerifyOptions,
) -> Result<EnsembleOutcome, EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidInput("ensemble size must be >= 1".into()));
    }
    if reconstructions_per_subject.is_empty() || references.is_empty() {
        return Err(EvalError::EvalFailed(
            "ensemble needs reconstruction groups and references".into(),
        ));
    }

    let mut skipped_subjects = Vec::new();
    let mut groups: Vec<(&str, &[ImageSample])> = Vec::new();
    for (subject, recons) in reconstructions_per_subject {
        if recons.len() < n {
            skipped_subjects.push(subject.clone());
        } else {
            groups.push((subject, &recons[..n]));
        }
    }
    if groups.is_empty() {
        return Err(EvalError::EvalFailed(format!(
            "every subject holds fewer than {n} reconstructions"
        )));
    }

    // Identification: plurality vote, ties to the lowest class index.
    let mut correct = 0usize;
    for (subject, recons) in &groups {
        let mut votes = vec![0usize; head.num_classes()];
        for r in *recons {
            votes[head.predict_index(&phi.embed(r)?)?] += 1;
        }
        let mut winner = 0usize;
        for (i, &v) in votes.iter().enumerate() {
            if v > votes[winner] {
                winner = i;
            }
        }
        if head.class_ids()[winner] == *subject {
            correct += 1;
        }
    }

    // Verification: per-group max score is the any-accept statistic.
    let refs = embed_references(references, phi)?;
    let mut genuine_max = Vec::with_capacity(groups.len());
    let mut group_sizes = Vec::with_capacity(groups.len());
    let mut unpaired = Vec::new();
    for (_, recons) in &groups {
        let (scores, missing) =
            genuine_scores(recons, &refs, VerifyMode::SameImage, phi, opts.similarity)?;
        unpaired.extend(missing);
        if let Some(m) = scores.iter().copied().reduce(f64::max) {
            genuine_max.push(m);
            group_sizes.push(scores.len());
        }
    }
    if genuine_max.is_empty() {
        return Err(EvalError::EvalFailed(
            "no reconstruction group could be paired with the gallery".into(),
        ));
    }

    let total: usize = group_sizes.iter().sum();
    let flat = impostor_scores(
        &refs,
        opts.impostor_multiple.max(1) * total,
        opts.similarity,
        opts.seed,
    )?;
    let mut impostor_max = Vec::with_capacity(opts.impostor_multiple.max(1) * group_sizes.len());
    let mut cursor = 0usize;
    for &size in &group_sizes {
        for _ in 0..opts.impostor_multiple.max(1) {
            let chunk = &flat[cursor..cursor + size];
            cursor += size;
            impostor_max.push(chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }

    let mut verification = tar_at_far(&genuine_max, &impostor_max, far_target)?;
    verification.mode = Some(VerifyMode::SameImage);

    Ok(EnsembleOutcome {
        n,
        identification_accuracy: correct as f64 / groups.len() as f64,
        identification_chance: 1.0 / head.num_classes() as f64,
        verification,
        subjects_used: groups.len(),
        skipped_subjects,
        unpaired,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::Similarity;
    use crate::verify::verify_reconstructions;
    use invlab_core::CoreError;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct MeanEmbedder;
    impl Embedder for MeanEmbedder {
        fn embedder_id(&self) -> String {
            "mean@test".into()
        }
        fn embedding_length(&self) -> usize {
            8
        }
        fn embed(&self, image: &ImageSample) -> Result<Vec<f32>, CoreError> {
            let (h, w, c) = image.shape();
            let (h2, w2) = (h / 2, w / 2);
            let mut out = Vec::new();
            for bi in 0..2 {
                for bj in 0..2 {
                    for ch in 0..c.min(2) {
                        let mut acc = 0.0;
                        for i in 0..h2 {
                            for j in 0..w2 {
                                acc += image.pixels[[bi * h2 + i, bj * w2 + j, ch]];
                            }
                        }
                        out.push(acc / (h2 * w2) as f32);
                    }
                }
            }
            Ok(out)
        }
    }

    fn image_for(subject: usize, sample: usize, noise: f32, tag: u64) -> ImageSample {
        let mut rng = ChaCha8Rng::seed_from_u64(tag.wrapping_mul(977) + (subject * 31 + sample) as u64);
        let px = Array3::from_shape_fn((8, 8, 3), |(i, j, ch)| {
            let base = (subject as f32 * 0.19 + (i / 4) as f32 * 0.1 * subject as f32
                + (j / 4) as f32 * 0.07
                + ch as f32 * 0.02)
                % 0.9;
            (base + rng.gen_range(-noise..=noise)).clamp(0.0, 1.0)
        });
        ImageSample::new(
            px,
            format!("subject_{subject:03}"),
            format!("sample_{sample:03}"),
            "raw",
        )
        .unwrap()
    }

    fn head_for(refs: &[ImageSample]) -> CentroidHead {
        let embeddings: Vec<Vec<f32>> =
            refs.iter().map(|r| MeanEmbedder.embed(r).unwrap()).collect();
        let labels: Vec<String> = refs.iter().map(|r| r.subject_id.clone()).collect();
        CentroidHead::fit(&embeddings, &labels, Similarity::NegEuclidean).unwrap()
    }

    #[test]
    fn single_reconstruction_ensemble_equals_plain_verification() {
        let refs: Vec<ImageSample> = (0..5)
            .flat_map(|s| (0..2).map(move |x| image_for(s, x, 0.0, 0)))
            .collect();
        let head = head_for(&refs);
        let groups: Vec<(String, Vec<ImageSample>)> = (0..5)
            .map(|s| {
                (
                    format!("subject_{s:03}"),
                    vec![image_for(s, 0, 0.03, 1)],
                )
            })
            .collect();
        let flat_recons: Vec<ImageSample> =
            groups.iter().flat_map(|(_, r)| r.clone()).collect();

        let opts = VerifyOptions::default();
        let plain = verify_reconstructions(
            &flat_recons,
            &refs,
            VerifyMode::SameImage,
            &MeanEmbedder,
            0.1,
            &opts,
        )
        .unwrap();
        let ens =
            ensemble_attack(&groups, 1, &MeanEmbedder, &head, &refs, 0.1, &opts).unwrap();

        assert_eq!(ens.verification, plain.result);
        assert_eq!(ens.subjects_used, 5);
        assert!(ens.skipped_subjects.is_empty());
    }

    #[test]
    fn any_accept_tar_does_not_drop_with_more_reconstructions() {
        let refs: Vec<ImageSample> = (0..6)
            .flat_map(|s| (0..2).map(move |x| image_for(s, x, 0.0, 0)))
            .collect();
        let head = head_for(&refs);
        // First reconstruction is poor, later ones are close copies, so a
        // larger ensemble can only help the any-accept rule.
        let groups: Vec<(String, Vec<ImageSample>)> = (0..6)
            .map(|s| {
                (
                    format!("subject_{s:03}"),
                    vec![
                        image_for(s, 0, 0.35, 2),
                        image_for(s, 0, 0.01, 3),
                        image_for(s, 0, 0.01, 4),
                    ],
                )
            })
            .collect();
        let opts = VerifyOptions::default();
        let t1 = ensemble_attack(&groups, 1, &MeanEmbedder, &head, &refs, 0.1, &opts)
            .unwrap()
            .verification
            .tar;
        let t3 = ensemble_attack(&groups, 3, &MeanEmbedder, &head, &refs, 0.1, &opts)
            .unwrap()
            .verification
            .tar;
        assert!(t3 >= t1, "any-accept tar fell from {t1} to {t3}");
    }

    #[test]
    fn short_groups_are_skipped_and_logged() {
        let refs: Vec<ImageSample> = (0..4)
            .flat_map(|s| (0..2).map(move |x| image_for(s, x, 0.0, 0)))
            .collect();
        let head = head_for(&refs);
        let mut groups: Vec<(String, Vec<ImageSample>)> = (0..4)
            .map(|s| {
                (
                    format!("subject_{s:03}"),
                    vec![image_for(s, 0, 0.02, 5), image_for(s, 1, 0.02, 6)],
                )
            })
            .collect();
        groups[2].1.truncate(1);
        let out = ensemble_attack(
            &groups,
            2,
            &MeanEmbedder,
            &head,
            &refs,
            0.1,
            &VerifyOptions::default(),
        )
        .unwrap();
        assert_eq!(out.skipped_subjects, vec!["subject_002".to_string()]);
        assert_eq!(out.subjects_used, 3);
    }

    #[test]
    fn zero_ensemble_size_rejected() {
        let refs = vec![image_for(0, 0, 0.0, 0)];
        let head = head_for(&refs);
        let err = ensemble_attack(
            &[("subject_000".to_string(), refs.clone())],
            0,
            &MeanEmbedder,
            &head,
            &refs,
            0.1,
            &VerifyOptions::default(),
        );
        assert!(matches!(err, Err(EvalError::InvalidInput(_))));
    }
}
