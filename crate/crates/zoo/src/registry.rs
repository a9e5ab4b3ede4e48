//! On-disk model registry. Each entry lives under `<root>/<model_id>/` as
//! `spec.json`, `weights.bin`, and `checksum`; registration is idempotent
//! for identical weights and refuses silent overwrites.

use std::path::{Path, PathBuf};

use invlab_nn::io::{load_weights, save_weights, sha256_hex_file};
use invlab_nn::Network;

use crate::error::ZooError;
use crate::spec::ExtractorSpec;

/// A registered extractor: spec plus materialized weights.
#[derive(Debug, Clone)]
pub struct ExtractorHandle {
    pub spec: ExtractorSpec,
    pub network: Network,
    pub checksum: String,
}

impl ExtractorHandle {
    pub fn model_id(&self) -> &str {
        &self.spec.model_id
    }
}

#[derive(Debug, Clone)]
pub struct Registry {
    root: PathBuf,
}

impl Registry {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, ZooError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_dir(&self, model_id: &str) -> PathBuf {
        self.root.join(model_id)
    }

    pub fn contains(&self, model_id: &str) -> bool {
        self.entry_dir(model_id).join("checksum").exists()
    }

    pub fn list(&self) -> Result<Vec<String>, ZooError> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().join("checksum").exists() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Persists a spec with trained weights and returns a usable handle.
    /// Re-registering byte-identical weights is a no-op; differing weights
    /// under the same id are refused.
    pub fn register(
        &self,
        spec: &ExtractorSpec,
        network: &Network,
    ) -> Result<ExtractorHandle, ZooError> {
        spec.validate()?;
        // Weight/spec shape agreement: a freshly built network must hold
        // tensors of identical shapes.
        let reference = spec.build()?;
        let ref_shapes: Vec<Vec<usize>> = reference
            .layers()
            .iter()
            .flat_map(|l| l.persisted())
            .map(|t| t.shape().to_vec())
            .collect();
        let got_shapes: Vec<Vec<usize>> = network
            .layers()
            .iter()
            .flat_map(|l| l.persisted())
            .map(|t| t.shape().to_vec())
            .collect();
        if ref_shapes != got_shapes {
            return Err(ZooError::RegistryError(format!(
                "weights do not fit spec '{}': {} tensors of shapes {:?}, spec needs {} of {:?}",
                spec.model_id,
                got_shapes.len(),
                got_shapes,
                ref_shapes.len(),
                ref_shapes
            )));
        }

        let dir = self.entry_dir(&spec.model_id);
        let weights_path = dir.join("weights.bin");
        let spec_path = dir.join("spec.json");
        let checksum_path = dir.join("checksum");

        if checksum_path.exists() {
            let existing = std::fs::read_to_string(&checksum_path)?.trim().to_string();
            let tmp = dir.join("weights.candidate");
            let candidate = save_weights(&tmp, network)?;
            std::fs::remove_file(&tmp)?;
            if candidate != existing {
                return Err(ZooError::RegistryError(format!(
                    "'{}' already registered with different weights (checksum {} vs {})",
                    spec.model_id, existing, candidate
                )));
            }
            let stored: ExtractorSpec =
                serde_json::from_str(&std::fs::read_to_string(&spec_path)?)?;
            if &stored != spec {
                return Err(ZooError::RegistryError(format!(
                    "'{}' already registered with a different spec",
                    spec.model_id
                )));
            }
            return Ok(ExtractorHandle {
                spec: spec.clone(),
                network: network.clone(),
                checksum: existing,
            });
        }

        std::fs::create_dir_all(&dir)?;
        let checksum = save_weights(&weights_path, network)?;
        std::fs::write(&spec_path, serde_json::to_string_pretty(spec)?)?;
        std::fs::write(&checksum_path, format!("{checksum}\n"))?;
        Ok(ExtractorHandle {
            spec: spec.clone(),
            network: network.clone(),
            checksum,
        })
    }

    /// Loads a registered extractor, verifying the stored checksum.
    pub fn open(&self, model_id: &str) -> Result<ExtractorHandle, ZooError> {
        let dir = self.entry_dir(model_id);
        let spec_path = dir.join("spec.json");
        if !spec_path.exists() {
            return Err(ZooError::RegistryError(format!(
                "no registry entry for '{model_id}' under {}",
                self.root.display()
            )));
        }
        let spec: ExtractorSpec = serde_json::from_str(&std::fs::read_to_string(&spec_path)?)?;
        if spec.model_id != model_id {
            return Err(ZooError::RegistryError(format!(
                "entry '{model_id}' holds spec for '{}'",
                spec.model_id
            )));
        }
        let weights_path = dir.join("weights.bin");
        let expected = std::fs::read_to_string(dir.join("checksum"))?
            .trim()
            .to_string();
        let actual = sha256_hex_file(&weights_path)?;
        if actual != expected {
            return Err(ZooError::RegistryError(format!(
                "weights for '{model_id}' are corrupt: checksum {actual} vs recorded {expected}"
            )));
        }
        let mut network = spec.build()?;
        load_weights(&weights_path, &mut network)?;
        Ok(ExtractorHandle {
            spec,
            network,
            checksum: actual,
        })
    }
}
