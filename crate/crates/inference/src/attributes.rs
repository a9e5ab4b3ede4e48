//! Architecture/training attribute prediction from single embeddings: one
//! categorical head per schema attribute, all sharing the embedding
//! normalization fitted on the training set.

use invlab_core::{minmax_apply_vec, minmax_fit_vecs, EmbeddingRecord, NormalizationParams};
use invlab_nn::Network;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::InferError;
use crate::mlp::{fit_mlp, MlpTrainConfig};

/// Attribute name/value pairs describing one model, e.g.
/// `[("activation", "tanh"), ("kernel", "5")]`.
pub type AttributeAssignment = Vec<(String, String)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attributes: Vec<AttributeSpec>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<(&str, Vec<&str>)>) -> Self {
        Self {
            attributes: attributes
                .into_iter()
                .map(|(name, values)| AttributeSpec {
                    name: name.to_string(),
                    values: values.into_iter().map(str::to_string).collect(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), InferError> {
        if self.attributes.is_empty() {
            return Err(InferError::ConfigError("schema has no attributes".into()));
        }
        let mut names: Vec<&str> = self.attributes.iter().map(|a| a.name.as_str()).collect();
        names.sort();
        names.dedup();
        if names.len() != self.attributes.len() {
            return Err(InferError::ConfigError("duplicate attribute names".into()));
        }
        for a in &self.attributes {
            let mut vals = a.values.clone();
            vals.sort();
            vals.dedup();
            if vals.len() != a.values.len() {
                return Err(InferError::ConfigError(format!(
                    "attribute '{}' lists duplicate values",
                    a.name
                )));
            }
            if a.values.len() < 2 {
                return Err(InferError::ConfigError(format!(
                    "attribute '{}' needs at least 2 values",
                    a.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAccuracy {
    pub name: String,
    pub held_out_accuracy: f64,
    /// 1 / (number of schema values) for the attribute.
    pub chance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributePrediction {
    pub name: String,
    pub value: String,
    pub scores: Vec<f64>,
}

struct AttributeHead {
    spec: AttributeSpec,
    network: Network,
}

pub struct AttributePredictor {
    pub input_length: usize,
    pub norm: NormalizationParams,
    pub per_attribute: Vec<AttributeAccuracy>,
    heads: Vec<AttributeHead>,
}

impl AttributePredictor {
    /// One categorical prediction per schema attribute for a raw embedding.
    pub fn predict(&self, vector: &[f32]) -> Result<Vec<AttributePrediction>, InferError> {
        if vector.len() != self.input_length {
            return Err(InferError::LengthMismatch {
                expected: self.input_length,
                got: vector.len(),
            });
        }
        let normed = minmax_apply_vec(vector, &self.norm)?;
        let x = Array2::from_shape_vec((1, normed.len()), normed)
            .expect("row shape matches vector length")
            .into_dyn();
        let mut out = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let logits = head.network.forward(&x)?;
            let scores = super::classifier::softmax_slice(
                logits.as_slice().expect("contiguous logits"),
            );
            let mut best = 0usize;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            out.push(AttributePrediction {
                name: head.spec.name.clone(),
                value: head.spec.values[best].clone(),
                scores,
            });
        }
        Ok(out)
    }

    /// Per-attribute fraction of examples whose predicted value matches the
    /// labeled one.
    pub fn accuracy_on(
        &self,
        examples: &[(EmbeddingRecord, AttributeAssignment)],
    ) -> Result<Vec<AttributeAccuracy>, InferError> {
        if examples.is_empty() {
            return Err(InferError::DataError("no examples to score".into()));
        }
        let mut correct = vec![0usize; self.heads.len()];
        for (record, labels) in examples {
            let preds = self.predict(&record.vector)?;
            for (i, p) in preds.iter().enumerate() {
                let truth = lookup(labels, &p.name)?;
                if p.value == truth {
                    correct[i] += 1;
                }
            }
        }
        Ok(self
            .heads
            .iter()
            .zip(correct)
            .map(|(head, c)| AttributeAccuracy {
                name: head.spec.name.clone(),
                held_out_accuracy: c as f64 / examples.len() as f64,
                chance: 1.0 / head.spec.values.len() as f64,
            })
            .collect())
    }
}

fn lookup<'a>(labels: &'a AttributeAssignment, name: &str) -> Result<&'a str, InferError> {
    labels
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| InferError::DataError(format!("example missing label '{name}'")))
}

/// Trains one head per schema attribute on labeled embeddings. Every
/// example must carry a label for every attribute, and every attribute must
/// take at least two distinct values in the training data.
pub fn train_attribute_predictor(
    examples: &[(EmbeddingRecord, AttributeAssignment)],
    schema: &AttributeSchema,
    hidden: &[usize],
    cfg: &MlpTrainConfig,
) -> Result<AttributePredictor, InferError> {
    schema.validate()?;
    if examples.is_empty() {
        return Err(InferError::DataError("no training examples".into()));
    }
    let input_length = examples[0].0.vector.len();
    for (record, _) in examples {
        if record.vector.len() != input_length {
            return Err(InferError::LengthMismatch {
                expected: input_length,
                got: record.vector.len(),
            });
        }
    }
    let norm = minmax_fit_vecs(examples.iter().map(|(r, _)| r.vector.as_slice()))?;
    let mut x = Array2::<f32>::zeros((examples.len(), input_length));
    for (i, (record, _)) in examples.iter().enumerate() {
        let v = minmax_apply_vec(&record.vector, &norm)?;
        for (j, val) in v.into_iter().enumerate() {
            x[[i, j]] = val;
        }
    }

    let mut heads = Vec::with_capacity(schema.attributes.len());
    let mut per_attribute = Vec::with_capacity(schema.attributes.len());
    for (a, attr) in schema.attributes.iter().enumerate() {
        let mut labels = Vec::with_capacity(examples.len());
        for (_, assignment) in examples {
            let value = lookup(assignment, &attr.name)?;
            let idx = attr.values.iter().position(|v| v == value).ok_or_else(|| {
                InferError::DataError(format!(
                    "value '{value}' of attribute '{}' is not in the schema",
                    attr.name
                ))
            })?;
            labels.push(idx);
        }
        let mut distinct = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(InferError::DataError(format!(
                "attribute '{}' takes a single value in the training data",
                attr.name
            )));
        }
        let mut head_cfg = cfg.clone();
        head_cfg.seed = cfg.seed.wrapping_add(a as u64);
        let (network, report) = fit_mlp(&x, &labels, attr.values.len(), hidden, &head_cfg)?;
        per_attribute.push(AttributeAccuracy {
            name: attr.name.clone(),
            held_out_accuracy: report.best_val_accuracy,
            chance: 1.0 / attr.values.len() as f64,
        });
        heads.push(AttributeHead {
            spec: attr.clone(),
            network,
        });
    }
    Ok(AttributePredictor {
        input_length,
        norm,
        per_attribute,
        heads,
    })
}
