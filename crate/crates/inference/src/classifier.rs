//! Model attribution: given an observed embedding, score which registered
//! (model, layer) pair produced it. One classifier exists per embedding
//! length; inputs are min-max normalized with parameters fitted on the
//! training set and stored alongside the weights.

use std::path::Path;

use invlab_core::{minmax_apply_vec, minmax_fit_vecs, EmbeddingRecord, NormalizationParams};
use invlab_nn::io::{load_weights, save_weights};
use invlab_nn::{build_network, Network};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::InferError;
use crate::mlp::{fit_mlp, mlp_specs, FitReport, MlpTrainConfig};

/// (model_id, layer_id) naming one attribution class.
pub type ClassLabel = (String, String);

pub const DEFAULT_HIDDEN_WIDTHS: [usize; 5] = [512, 256, 128, 64, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryClassifierSpec {
    pub input_length: usize,
    pub hidden_widths: Vec<usize>,
    pub class_labels: Vec<ClassLabel>,
    /// Labeled embeddings used to fit the classifier; recorded at train
    /// time.
    pub training_set_size: usize,
}

impl AuxiliaryClassifierSpec {
    pub fn for_classes(input_length: usize, class_labels: Vec<ClassLabel>) -> Self {
        Self {
            input_length,
            hidden_widths: DEFAULT_HIDDEN_WIDTHS.to_vec(),
            class_labels,
            training_set_size: 0,
        }
    }

    pub fn validate(&self) -> Result<(), InferError> {
        if self.input_length == 0 {
            return Err(InferError::ConfigError("input length must be > 0".into()));
        }
        if self.class_labels.len() < 2 {
            return Err(InferError::ConfigError(format!(
                "attribution needs at least 2 classes, got {}",
                self.class_labels.len()
            )));
        }
        let mut seen = self.class_labels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.class_labels.len() {
            return Err(InferError::ConfigError("duplicate class labels".into()));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(InferError::ConfigError("hidden widths must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_index: usize,
    pub model_id: String,
    pub layer_id: String,
    /// Per-class probabilities in spec class order, summing to 1.
    pub scores: Vec<f64>,
}

pub struct AuxiliaryClassifier {
    pub spec: AuxiliaryClassifierSpec,
    pub norm: NormalizationParams,
    pub held_out_accuracy: f64,
    network: Network,
}

impl AuxiliaryClassifier {
    pub fn classifier_id(&self) -> String {
        format!("aux-len{}", self.spec.input_length)
    }

    /// Scores one raw embedding vector. Normalization is applied here,
    /// exactly once; callers pass unnormalized embeddings.
    pub fn predict(&self, vector: &[f32]) -> Result<Prediction, InferError> {
        if vector.len() != self.spec.input_length {
            return Err(InferError::LengthMismatch {
                expected: self.spec.input_length,
                got: vector.len(),
            });
        }
        let normed = minmax_apply_vec(vector, &self.norm)?;
        let x = Array2::from_shape_vec((1, normed.len()), normed)
            .expect("row shape matches vector length")
            .into_dyn();
        let logits = self.network.forward(&x)?;
        let scores = softmax_slice(logits.as_slice().expect("contiguous logits"));
        let mut class_index = 0usize;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[class_index] {
                class_index = i;
            }
        }
        let (model_id, layer_id) = self.spec.class_labels[class_index].clone();
        Ok(Prediction {
            class_index,
            model_id,
            layer_id,
            scores,
        })
    }

    pub fn predict_record(&self, record: &EmbeddingRecord) -> Result<Prediction, InferError> {
        self.predict(&record.vector)
    }

    /// Fraction of records whose argmax class matches their recorded
    /// (model, layer) source.
    pub fn accuracy_on(&self, records: &[EmbeddingRecord]) -> Result<f64, InferError> {
        if records.is_empty() {
            return Err(InferError::DataError("no records to score".into()));
        }
        let mut correct = 0usize;
        for r in records {
            let p = self.predict_record(r)?;
            if p.model_id == r.source_model_id && p.layer_id == r.layer_id {
                correct += 1;
            }
        }
        Ok(correct as f64 / records.len() as f64)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), InferError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let meta = StoredClassifier {
            spec: self.spec.clone(),
            norm: self.norm.clone(),
            held_out_accuracy: self.held_out_accuracy,
        };
        let mut body = serde_json::to_string_pretty(&meta)?;
        body.push('\n');
        std::fs::write(dir.join("classifier.json"), body)?;
        save_weights(dir.join("weights.bin"), &self.network)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, InferError> {
        let dir = dir.as_ref();
        let meta: StoredClassifier =
            serde_json::from_str(&std::fs::read_to_string(dir.join("classifier.json"))?)?;
        meta.spec.validate()?;
        let mut network = build_network(
            &mlp_specs(
                meta.spec.input_length,
                &meta.spec.hidden_widths,
                meta.spec.class_labels.len(),
            ),
            0,
        )?;
        load_weights(dir.join("weights.bin"), &mut network)?;
        Ok(Self {
            spec: meta.spec,
            norm: meta.norm,
            held_out_accuracy: meta.held_out_accuracy,
            network,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct StoredClassifier {
    spec: AuxiliaryClassifierSpec,
    norm: NormalizationParams,
    held_out_accuracy: f64,
}

pub(crate) fn softmax_slice(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Trains the attribution classifier on labeled embeddings. Every record's
/// (model, layer) pair must appear in the spec's class list, every class
/// must have at least one sample, and all vectors must match the spec
/// length.
pub fn train_auxiliary_classifier(
    records: &[EmbeddingRecord],
    spec: &AuxiliaryClassifierSpec,
    cfg: &MlpTrainConfig,
) -> Result<(AuxiliaryClassifier, FitReport), InferError> {
    spec.validate()?;
    if records.is_empty() {
        return Err(InferError::DataError("no training embeddings".into()));
    }
    let mut labels = Vec::with_capacity(records.len());
    let mut counts = vec![0usize; spec.class_labels.len()];
    for r in records {
        if r.vector.len() != spec.input_length {
            return Err(InferError::LengthMismatch {
                expected: spec.input_length,
                got: r.vector.len(),
            });
        }
        let key = (r.source_model_id.clone(), r.layer_id.clone());
        let idx = spec
            .class_labels
            .iter()
            .position(|c| *c == key)
            .ok_or_else(|| {
                InferError::DataError(format!(
                    "record from ({}, {}) matches no spec class",
                    key.0, key.1
                ))
            })?;
        counts[idx] += 1;
        labels.push(idx);
    }
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(InferError::DataError(format!(
                "class ({}, {}) has zero samples",
                spec.class_labels[i].0, spec.class_labels[i].1
            )));
        }
    }

    let norm = minmax_fit_vecs(records.iter().map(|r| r.vector.as_slice()))?;
    let mut x = Array2::<f32>::zeros((records.len(), spec.input_length));
    for (i, r) in records.iter().enumerate() {
        let v = minmax_apply_vec(&r.vector, &norm)?;
        for (j, val) in v.into_iter().enumerate() {
            x[[i, j]] = val;
        }
    }

    let (network, report) = fit_mlp(
        &x,
        &labels,
        spec.class_labels.len(),
        &spec.hidden_widths,
        cfg,
    )?;
    let mut stored = spec.clone();
    stored.training_set_size = records.len();
    Ok((
        AuxiliaryClassifier {
            spec: stored,
            norm,
            held_out_accuracy: report.best_val_accuracy,
            network,
        },
        report,
    ))
}
