//! Recognition quality of a trained extractor: closed-set identification and
//! verification on a held-out test set, with an enroll/probe split per
//! identity.

use std::collections::BTreeMap;

use invlab_core::ImageSample;
use invlab_evalkit::{similarity, tar_at_far, CentroidHead, EvalError, Similarity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::extract_embeddings;
use crate::error::ZooError;
use crate::registry::ExtractorHandle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub identification_accuracy: f64,
    pub tar: f64,
    pub far_target: f64,
    pub threshold: f64,
    pub test_identity_count: usize,
    pub probe_count: usize,
}

/// Evaluates an extractor on a labeled test set. Each identity's samples are
/// ordered by sample id; the first half enrolls, the rest probe. Genuine
/// verification pairs compare a probe against its identity's first enrolled
/// embedding, impostor pairs against another identity's (ten draws per
/// probe, seeded).
pub fn evaluate_recognition(
    handle: &ExtractorHandle,
    layer_id: &str,
    test_set: &[ImageSample],
    far_target: f64,
    seed: u64,
) -> Result<RecognitionReport, ZooError> {
    let records = extract_embeddings(handle, test_set, layer_id)?;
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_subject.entry(&r.subject_id).or_default().push(i);
    }
    if by_subject.len() < 2 {
        return Err(ZooError::Eval(EvalError::InvalidInput(format!(
            "recognition needs at least two identities, got {}",
            by_subject.len()
        ))));
    }
    for (subject, idx) in &by_subject {
        if idx.len() < 2 {
            return Err(ZooError::Eval(EvalError::InvalidInput(format!(
                "identity '{subject}' has a single sample; cannot split"
            ))));
        }
    }

    let mut enroll_vecs: Vec<Vec<f32>> = Vec::new();
    let mut enroll_labels: Vec<String> = Vec::new();
    let mut reference: BTreeMap<String, usize> = BTreeMap::new();
    let mut probes: Vec<usize> = Vec::new();
    for (subject, idx) in &by_subject {
        let mut ordered = idx.clone();
        ordered.sort_by(|&a, &b| records[a].sample_id.cmp(&records[b].sample_id));
        let cut = (ordered.len() + 1) / 2;
        for &i in &ordered[..cut] {
            if !reference.contains_key(*subject) {
                reference.insert(subject.to_string(), i);
            }
            enroll_vecs.push(records[i].vector.clone());
            enroll_labels.push(subject.to_string());
        }
        probes.extend_from_slice(&ordered[cut..]);
    }

    let head = CentroidHead::fit(&enroll_vecs, &enroll_labels, Similarity::NegEuclidean)
        .map_err(ZooError::Eval)?;
    let subjects: Vec<&String> = reference.keys().collect();

    let mut correct = 0usize;
    let mut genuine = Vec::with_capacity(probes.len());
    let mut impostor = Vec::with_capacity(probes.len() * 10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &p in &probes {
        let rec = &records[p];
        if head.predict(&rec.vector).map_err(ZooError::Eval)? == rec.subject_id {
            correct += 1;
        }
        let own = reference[&rec.subject_id];
        genuine.push(
            similarity(Similarity::NegEuclidean, &rec.vector, &records[own].vector)
                .map_err(ZooError::Eval)?,
        );
        for _ in 0..10 {
            let other = loop {
                let s = subjects[rng.gen_range(0..subjects.len())];
                if *s != rec.subject_id {
                    break s;
                }
            };
            impostor.push(
                similarity(
                    Similarity::NegEuclidean,
                    &rec.vector,
                    &records[reference[other]].vector,
                )
                .map_err(ZooError::Eval)?,
            );
        }
    }

    let ver = tar_at_far(&genuine, &impostor, far_target).map_err(ZooError::Eval)?;
    Ok(RecognitionReport {
        identification_accuracy: correct as f64 / probes.len() as f64,
        tar: ver.tar,
        far_target,
        threshold: ver.threshold,
        test_identity_count: by_subject.len(),
        probe_count: probes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{cnn_spec, ActChoice, CnnKnobs, Downsample};
    use crate::train::{train_extractor, TrainConfig};
    use invlab_core::Modality;
    use ndarray::Array3;
    use rand::SeedableRng;

    fn sample(sid: usize, x: usize) -> ImageSample {
        let mut rng = ChaCha8Rng::seed_from_u64((sid * 97 + x) as u64);
        let base = (sid as f32 * 0.19) % 0.8;
        let px = Array3::from_shape_fn((16, 16, 3), |(i, j, ch)| {
            (base
                + 0.2 * (((i * (sid + 2) + 3 * j) % 7) as f32 / 7.0)
                + 0.02 * ch as f32
                + rng.gen_range(-0.02..0.02f32))
            .clamp(0.0, 1.0)
        });
        ImageSample::new(px, format!("s{sid:02}"), format!("x{x:02}"), "raw").unwrap()
    }

    fn pool(identities: usize, samples: usize) -> Vec<ImageSample> {
        (0..identities)
            .flat_map(|s| (0..samples).map(move |x| sample(s, x)))
            .collect()
    }

    #[test]
    fn separable_identities_score_high() {
        let spec = cnn_spec(
            "eval-cnn",
            Modality::Generic,
            16,
            CnnKnobs {
                kernel: 3,
                activation: ActChoice::Relu,
                downsample: Downsample::MaxPool,
                conv_blocks: 2,
                base_channels: 4,
                batch_norm: true,
                embedding_len: 16,
            },
            4,
            7,
        )
        .unwrap();
        let mut cfg = TrainConfig::desk_default(3);
        cfg.epochs = 6;
        let (handle, _) = train_extractor(&spec, &pool(4, 8), &cfg).unwrap();
        let report = evaluate_recognition(&handle, "emb", &pool(4, 6), 0.1, 5).unwrap();
        assert_eq!(report.test_identity_count, 4);
        assert!(report.probe_count >= 8);
        assert!(
            report.identification_accuracy >= 0.5,
            "accuracy {}",
            report.identification_accuracy
        );
        assert!(report.tar >= 0.0 && report.tar <= 1.0);
    }

    #[test]
    fn single_identity_is_refused() {
        let spec = cnn_spec(
            "eval-one",
            Modality::Generic,
            16,
            CnnKnobs {
                kernel: 3,
                activation: ActChoice::Relu,
                downsample: Downsample::StridedConv,
                conv_blocks: 2,
                base_channels: 4,
                batch_norm: false,
                embedding_len: 16,
            },
            2,
            7,
        )
        .unwrap();
        let mut cfg = TrainConfig::desk_default(3);
        cfg.epochs = 1;
        let (handle, _) = train_extractor(&spec, &pool(2, 4), &cfg).unwrap();
        let one: Vec<ImageSample> = (0..4).map(|x| sample(0, x)).collect();
        assert!(matches!(
            evaluate_recognition(&handle, "emb", &one, 0.1, 5),
            Err(ZooError::Eval(_))
        ));
    }
}
