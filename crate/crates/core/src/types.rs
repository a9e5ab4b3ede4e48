//! Domain value types. All types here are immutable after construction and
//! safe to share across threads.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Biometric modality of a sample or embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Fingerprint,
    Generic,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Face => write!(f, "face"),
            Modality::Fingerprint => write!(f, "fingerprint"),
            Modality::Generic => write!(f, "generic"),
        }
    }
}

/// One feature vector together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub vector: Vec<f32>,
    pub source_model_id: String,
    pub layer_id: String,
    pub subject_id: String,
    pub sample_id: String,
    pub modality: Modality,
}

impl EmbeddingRecord {
    /// Builds a record, rejecting empty or non-finite vectors.
    pub fn new(
        vector: Vec<f32>,
        source_model_id: impl Into<String>,
        layer_id: impl Into<String>,
        subject_id: impl Into<String>,
        sample_id: impl Into<String>,
        modality: Modality,
    ) -> Result<Self, CoreError> {
        if vector.is_empty() {
            return Err(CoreError::InvalidInput("empty embedding vector".into()));
        }
        if let Some(i) = vector.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::InvalidInput(format!(
                "non-finite entry at dimension {i}"
            )));
        }
        Ok(Self {
            vector,
            source_model_id: source_model_id.into(),
            layer_id: layer_id.into(),
            subject_id: subject_id.into(),
            sample_id: sample_id.into(),
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }

    /// Class label used by model-inference classifiers.
    pub fn class_key(&self) -> (String, String) {
        (self.source_model_id.clone(), self.layer_id.clone())
    }
}

/// Per-dimension min/max fitted over a set of embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl NormalizationParams {
    pub fn new(min: Vec<f32>, max: Vec<f32>) -> Result<Self, CoreError> {
        if min.len() != max.len() {
            return Err(CoreError::LengthMismatch {
                expected: min.len(),
                got: max.len(),
            });
        }
        if min.is_empty() {
            return Err(CoreError::InvalidInput("empty normalization params".into()));
        }
        for i in 0..min.len() {
            if !(min[i].is_finite() && max[i].is_finite()) {
                return Err(CoreError::InvalidInput(format!(
                    "non-finite bound at dimension {i}"
                )));
            }
            if min[i] > max[i] {
                return Err(CoreError::InvalidInput(format!(
                    "min > max at dimension {i}: {} > {}",
                    min[i], max[i]
                )));
            }
        }
        Ok(Self { min, max })
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }
}

/// Conditions on the attacker's dataset relative to the target system's data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackerDataCondition {
    /// Attacker holds other samples of the same identities.
    SameIdentities,
    /// Disjoint identities, identical preprocessing pipeline.
    SamePreProcessing,
    /// Disjoint identities and a different preprocessing pipeline.
    DiffPreProcessing,
}

/// Fine-tuning intensity of the target extractor. The ordering is total:
/// `NoAdapt < Ft1 < ... < Ft5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FtLevel {
    NoAdapt,
    Ft1,
    Ft2,
    Ft3,
    Ft4,
    Ft5,
}

impl FtLevel {
    pub const ALL: [FtLevel; 6] = [
        FtLevel::NoAdapt,
        FtLevel::Ft1,
        FtLevel::Ft2,
        FtLevel::Ft3,
        FtLevel::Ft4,
        FtLevel::Ft5,
    ];

    /// 0 for NoAdapt through 5 for Ft5.
    pub fn rank(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for FtLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FtLevel::NoAdapt => write!(f, "no-adapt"),
            other => write!(f, "ft{}", other.rank()),
        }
    }
}

/// Attacker-side description of one attack configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub attacker_data_condition: AttackerDataCondition,
    pub ft_level: FtLevel,
    /// Extractor ids collected by the attacker.
    pub model_pool: Vec<String>,
    pub target_in_pool: bool,
    pub embedding_length: usize,
}

impl AttackScenario {
    /// Checks the pool against the true target id: when `target_in_pool` is
    /// false the true id must be absent, and vice versa.
    pub fn validate(&self, true_target_id: &str) -> Result<(), CoreError> {
        if self.embedding_length == 0 {
            return Err(CoreError::InvalidInput("embedding_length must be > 0".into()));
        }
        let present = self.model_pool.iter().any(|m| m == true_target_id);
        if self.target_in_pool != present {
            return Err(CoreError::InvalidInput(format!(
                "target_in_pool={} but target '{}' {} the pool",
                self.target_in_pool,
                true_target_id,
                if present { "is in" } else { "is absent from" }
            )));
        }
        Ok(())
    }
}

/// One image with pixel values in `[0,1]`, stored H×W×C.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Array3<f32>,
    pub subject_id: String,
    pub sample_id: String,
    pub preprocessing_tag: String,
}

impl ImageSample {
    pub fn new(
        pixels: Array3<f32>,
        subject_id: impl Into<String>,
        sample_id: impl Into<String>,
        preprocessing_tag: impl Into<String>,
    ) -> Result<Self, CoreError> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(CoreError::InvalidInput(format!(
                "degenerate image shape {h}x{w}x{c}"
            )));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(CoreError::InvalidInput(
                "pixel values outside [0,1]".into(),
            ));
        }
        Ok(Self {
            pixels,
            subject_id: subject_id.into(),
            sample_id: sample_id.into(),
            preprocessing_tag: preprocessing_tag.into(),
        })
    }

    /// (height, width, channels)
    pub fn shape(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }

    pub fn key(&self) -> (String, String) {
        (self.subject_id.clone(), self.sample_id.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn embedding_record_rejects_nan() {
        let err = EmbeddingRecord::new(
            vec![0.0, f32::NAN],
            "m",
            "l",
            "s",
            "x",
            Modality::Generic,
        );
        assert!(err.is_err());
    }

    #[test]
    fn ft_level_ordering_is_total() {
        for w in FtLevel::ALL.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert_eq!(FtLevel::NoAdapt.rank(), 0);
        assert_eq!(FtLevel::Ft5.rank(), 5);
    }

    #[test]
    fn scenario_pool_consistency() {
        let sc = AttackScenario {
            attacker_data_condition: AttackerDataCondition::SameIdentities,
            ft_level: FtLevel::NoAdapt,
            model_pool: vec!["a".into(), "b".into()],
            target_in_pool: false,
            embedding_length: 128,
        };
        assert!(sc.validate("c").is_ok());
        assert!(sc.validate("a").is_err());
        let mut in_pool = sc.clone();
        in_pool.target_in_pool = true;
        assert!(in_pool.validate("a").is_ok());
        assert!(in_pool.validate("c").is_err());
    }

    #[test]
    fn image_sample_validates_range() {
        let ok = Array3::from_elem((4, 4, 3), 0.5);
        assert!(ImageSample::new(ok, "s", "x", "raw").is_ok());
        let bad = Array3::from_elem((4, 4, 3), 1.5);
        assert!(ImageSample::new(bad, "s", "x", "raw").is_err());
    }
}
