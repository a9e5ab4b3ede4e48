//! Closed-set identification: classify a reconstruction's embedding against
//! the target system's enrolled identities.

use std::collections::BTreeMap;

use invlab_core::{Embedder, ImageSample};
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::scores::{similarity, Similarity};

/// Nearest-centroid identification head over enrolled subjects. Class order
/// is sorted by subject id so predictions are stable across fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentroidHead {
    class_ids: Vec<String>,
    centroids: Vec<Vec<f32>>,
    similarity: Similarity,
}

impl CentroidHead {
    pub fn fit(
        embeddings: &[Vec<f32>],
        labels: &[String],
        sim: Similarity,
    ) -> Result<Self, EvalError> {
        if embeddings.is_empty() || embeddings.len() != labels.len() {
            return Err(EvalError::InvalidInput(format!(
                "{} embeddings for {} labels",
                embeddings.len(),
                labels.len()
            )));
        }
        let dim = embeddings[0].len();
        if dim == 0 || embeddings.iter().any(|e| e.len() != dim) {
            return Err(EvalError::ShapeError("ragged embedding lengths".into()));
        }
        let mut groups: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
        for (e, l) in embeddings.iter().zip(labels) {
            let entry = groups.entry(l).or_insert_with(|| (vec![0.0; dim], 0));
            for (acc, &v) in entry.0.iter_mut().zip(e) {
                *acc += v as f64;
            }
            entry.1 += 1;
        }
        let mut class_ids = Vec::with_capacity(groups.len());
        let mut centroids = Vec::with_capacity(groups.len());
        for (label, (sum, count)) in groups {
            class_ids.push(label.to_string());
            centroids.push(sum.iter().map(|&s| (s / count as f64) as f32).collect());
        }
        Ok(Self {
            class_ids,
            centroids,
            similarity: sim,
        })
    }

    pub fn class_ids(&self) -> &[String] {
        &self.class_ids
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn embedding_length(&self) -> usize {
        self.centroids[0].len()
    }

    /// Index of the most similar centroid; ties resolve to the lowest index.
    pub fn predict_index(&self, embedding: &[f32]) -> Result<usize, EvalError> {
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let s = similarity(self.similarity, embedding, c)?;
            if s > best_score {
                best_score = s;
                best = i;
            }
        }
        Ok(best)
    }

    pub fn predict(&self, embedding: &[f32]) -> Result<&str, EvalError> {
        Ok(&self.class_ids[self.predict_index(embedding)?])
    }
}

/// Identification outcome together with the chance baseline for the enrolled
/// identity count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationOutcome {
    pub accuracy: f64,
    pub chance: f64,
    pub correct: usize,
    pub total: usize,
}

/// Fraction of reconstructions whose embeddings classify to their true
/// subject under the target system `(phi, head)`.
pub fn identification_accuracy(
    reconstructions: &[ImageSample],
    phi: &dyn Embedder,
    head: &CentroidHead,
) -> Result<IdentificationOutcome, EvalError> {
    if reconstructions.is_empty() {
        return Err(EvalError::EvalFailed("no reconstructions to identify".into()));
    }
    for r in reconstructions {
        if !head.class_ids.iter().any(|c| c == &r.subject_id) {
            return Err(EvalError::EvalFailed(format!(
                "subject '{}' is not enrolled in the identification head",
                r.subject_id
            )));
        }
    }
    let mut correct = 0usize;
    for r in reconstructions {
        let emb = phi.embed(r)?;
        if head.predict(&emb)? == r.subject_id {
            correct += 1;
        }
    }
    Ok(IdentificationOutcome {
        accuracy: correct as f64 / reconstructions.len() as f64,
        chance: 1.0 / head.num_classes() as f64,
        correct,
        total: reconstructions.len(),
    })
}
