//! Dataset manifests: a JSON file naming every image of every subject.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use invlab_core::Modality;

use crate::error::DataIoError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubjectEntry {
    pub id: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    /// Directory all `files` entries are relative to.
    pub root: PathBuf,
    pub modality: Modality,
    /// Declared square image size (images are rescaled on load).
    pub image_size: usize,
    pub preprocessing_tag: String,
    pub subjects: Vec<SubjectEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataIoError> {
        let raw = std::fs::read_to_string(path.as_ref()).map_err(|e| DataIoError::IngestError {
            path: path.as_ref().display().to_string(),
            detail: e.to_string(),
        })?;
        let mut manifest: DatasetManifest = serde_json::from_str(&raw)?;
        // A manifest travels with its dataset; resolve the root relative to
        // the manifest file's own directory when it is not absolute.
        if manifest.root.is_relative() {
            if let Some(dir) = path.as_ref().parent() {
                manifest.root = dir.join(&manifest.root);
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataIoError> {
        std::fs::write(path.as_ref(), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Checks structural invariants and that every referenced file exists.
    pub fn validate(&self) -> Result<(), DataIoError> {
        if self.image_size == 0 {
            return Err(DataIoError::InvalidInput("image_size must be positive".into()));
        }
        if self.subjects.is_empty() {
            return Err(DataIoError::InvalidInput("manifest lists no subjects".into()));
        }
        for subject in &self.subjects {
            if subject.files.is_empty() {
                return Err(DataIoError::InvalidInput(format!(
                    "subject {} has no samples",
                    subject.id
                )));
            }
            for file in &subject.files {
                let p = self.root.join(file);
                if !p.is_file() {
                    return Err(DataIoError::IngestError {
                        path: p.display().to_string(),
                        detail: "file does not exist".into(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn subject_ids(&self) -> Vec<&str> {
        self.subjects.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn sample_count(&self) -> usize {
        self.subjects.iter().map(|s| s.files.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(root: &Path) -> DatasetManifest {
        DatasetManifest {
            root: root.to_path_buf(),
            modality: Modality::Generic,
            image_size: 64,
            preprocessing_tag: "raw".into(),
            subjects: vec![SubjectEntry { id: "s1".into(), files: vec!["a.png".into()] }],
        }
    }

    #[test]
    fn missing_file_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path());
        assert!(matches!(m.validate(), Err(DataIoError::IngestError { .. })));
    }

    #[test]
    fn json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(Path::new("data"));
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let back = DatasetManifest::load(&p).unwrap();
        assert_eq!(back.root, dir.path().join("data"));
        assert_eq!(back.subjects, m.subjects);
    }

    #[test]
    fn empty_subject_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(dir.path());
        m.subjects[0].files.clear();
        assert!(m.validate().is_err());
    }
}
