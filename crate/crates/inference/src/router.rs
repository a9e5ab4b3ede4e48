//! Length-based dispatch: one attribution classifier exists per embedding
//! length, and an observed embedding routes to the classifier matching its
//! dimensionality.

use std::collections::BTreeMap;

use invlab_core::EmbeddingRecord;

use crate::classifier::{AuxiliaryClassifier, Prediction};
use crate::error::InferError;

#[derive(Default)]
pub struct ClassifierRouter {
    by_length: BTreeMap<usize, AuxiliaryClassifier>,
}

impl ClassifierRouter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, classifier: AuxiliaryClassifier) -> Result<(), InferError> {
        let len = classifier.spec.input_length;
        if self.by_length.contains_key(&len) {
            return Err(InferError::ConfigError(format!(
                "a classifier for length {len} is already registered"
            )));
        }
        self.by_length.insert(len, classifier);
        Ok(())
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.by_length.keys().copied().collect()
    }

    pub fn classifier_for(&self, length: usize) -> Option<&AuxiliaryClassifier> {
        self.by_length.get(&length)
    }

    pub fn predict(&self, vector: &[f32]) -> Result<Prediction, InferError> {
        let clf = self.by_length.get(&vector.len()).ok_or_else(|| {
            InferError::DataError(format!(
                "no classifier registered for embedding length {}",
                vector.len()
            ))
        })?;
        clf.predict(vector)
    }

    pub fn predict_record(&self, record: &EmbeddingRecord) -> Result<Prediction, InferError> {
        self.predict(&record.vector)
    }
}
