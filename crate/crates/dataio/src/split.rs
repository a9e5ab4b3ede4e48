//! Attacker/target data splits guaranteeing the attacker never sees the
//! target system's training or test samples.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use invlab_core::AttackerDataCondition;

use crate::error::DataIoError;
use crate::manifest::{DatasetManifest, SubjectEntry};

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub attacker: DatasetManifest,
    pub target_train: DatasetManifest,
    pub target_test: DatasetManifest,
}

fn abs_files(manifest: &DatasetManifest) -> BTreeMap<(String, PathBuf), String> {
    let mut map = BTreeMap::new();
    for s in &manifest.subjects {
        for f in &s.files {
            map.insert((s.id.clone(), manifest.root.join(f)), f.clone());
        }
    }
    map
}

fn rebuild(template: &DatasetManifest, picks: &BTreeMap<String, Vec<String>>) -> DatasetManifest {
    let mut manifest = template.clone();
    manifest.subjects = picks
        .iter()
        .filter(|(_, files)| !files.is_empty())
        .map(|(id, files)| SubjectEntry { id: id.clone(), files: files.clone() })
        .collect();
    manifest
}

/// Splits a target subject's files into train and test parts: the last
/// quarter (at least one file, when the subject has two or more) is held out.
fn train_test(files: &[String]) -> (Vec<String>, Vec<String>) {
    if files.len() < 2 {
        return (files.to_vec(), Vec::new());
    }
    let test_count = (files.len() / 4).max(1);
    let cut = files.len() - test_count;
    (files[..cut].to_vec(), files[cut..].to_vec())
}

/// Builds attacker and target datasets under one of the attacker-data
/// conditions. Sample-level disjointness always holds; subject-level
/// disjointness holds under the two different-identity conditions.
pub fn split_disjoint(
    attacker: &DatasetManifest,
    target: &DatasetManifest,
    condition: AttackerDataCondition,
) -> Result<SplitOutcome, DataIoError> {
    if attacker.modality != target.modality {
        return Err(DataIoError::SplitError(format!(
            "modalities differ: {} vs {}",
            attacker.modality, target.modality
        )));
    }
    match condition {
        AttackerDataCondition::SameIdentities | AttackerDataCondition::SamePreProcessing => {
            if attacker.preprocessing_tag != target.preprocessing_tag {
                return Err(DataIoError::SplitError(format!(
                    "condition {condition:?} requires equal preprocessing tags, got {} vs {}",
                    attacker.preprocessing_tag, target.preprocessing_tag
                )));
            }
        }
        AttackerDataCondition::DiffPreProcessing => {
            if attacker.preprocessing_tag == target.preprocessing_tag {
                return Err(DataIoError::SplitError(
                    "DiffPreProcessing requires different preprocessing tags".into(),
                ));
            }
        }
    }

    let mut attacker_picks: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut target_picks: BTreeMap<String, Vec<String>> = BTreeMap::new();

    match condition {
        AttackerDataCondition::SameIdentities => {
            // Shared samples are divided positionally: first half to the
            // attacker, second half to the target. Exclusive samples stay
            // with their own side.
            let a_files = abs_files(attacker);
            let t_files = abs_files(target);
            let a_keys: BTreeSet<_> = a_files.keys().cloned().collect();
            let t_keys: BTreeSet<_> = t_files.keys().cloned().collect();
            let shared: BTreeSet<_> = a_keys.intersection(&t_keys).cloned().collect();

            let mut shared_by_subject: BTreeMap<String, Vec<(String, PathBuf)>> = BTreeMap::new();
            for key in &shared {
                shared_by_subject.entry(key.0.clone()).or_default().push(key.clone());
            }
            for (subject, mut keys) in shared_by_subject {
                keys.sort();
                let cut = keys.len() / 2;
                for key in &keys[..cut] {
                    attacker_picks
                        .entry(subject.clone())
                        .or_default()
                        .push(a_files[key].clone());
                }
                for key in &keys[cut..] {
                    target_picks
                        .entry(subject.clone())
                        .or_default()
                        .push(t_files[key].clone());
                }
            }
            for key in a_keys.difference(&t_keys) {
                attacker_picks
                    .entry(key.0.clone())
                    .or_default()
                    .push(a_files[key].clone());
            }
            for key in t_keys.difference(&a_keys) {
                target_picks
                    .entry(key.0.clone())
                    .or_default()
                    .push(t_files[key].clone());
            }
        }
        AttackerDataCondition::SamePreProcessing | AttackerDataCondition::DiffPreProcessing => {
            let a_subjects: BTreeSet<_> = attacker.subjects.iter().map(|s| s.id.clone()).collect();
            let t_subjects: BTreeSet<_> = target.subjects.iter().map(|s| s.id.clone()).collect();
            let shared: Vec<_> = a_subjects.intersection(&t_subjects).cloned().collect();
            // Shared subjects alternate sides so both keep roughly half.
            let mut to_attacker: BTreeSet<String> =
                a_subjects.difference(&t_subjects).cloned().collect();
            let mut to_target: BTreeSet<String> =
                t_subjects.difference(&a_subjects).cloned().collect();
            for (i, s) in shared.iter().enumerate() {
                if i % 2 == 0 {
                    to_attacker.insert(s.clone());
                } else {
                    to_target.insert(s.clone());
                }
            }
            if to_attacker.is_empty() || to_target.is_empty() {
                return Err(DataIoError::SplitError(
                    "cannot form disjoint subject sets: one side would be empty".into(),
                ));
            }
            for s in &attacker.subjects {
                if to_attacker.contains(&s.id) {
                    attacker_picks.insert(s.id.clone(), s.files.clone());
                }
            }
            for s in &target.subjects {
                if to_target.contains(&s.id) {
                    target_picks.insert(s.id.clone(), s.files.clone());
                }
            }
        }
    }

    let mut train_picks: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut test_picks: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (subject, mut files) in target_picks {
        files.sort();
        let (train, test) = train_test(&files);
        train_picks.insert(subject.clone(), train);
        test_picks.insert(subject, test);
    }

    let outcome = SplitOutcome {
        attacker: rebuild(attacker, &attacker_picks),
        target_train: rebuild(target, &train_picks),
        target_test: rebuild(target, &test_picks),
    };

    let a = abs_files(&outcome.attacker);
    for t in [&outcome.target_train, &outcome.target_test] {
        for key in abs_files(t).keys() {
            if a.contains_key(key) {
                return Err(DataIoError::SplitError(format!(
                    "attacker and target share sample {key:?}"
                )));
            }
        }
    }
    if outcome.attacker.subjects.is_empty() {
        return Err(DataIoError::SplitError("attacker set is empty".into()));
    }
    if outcome.target_train.subjects.is_empty() {
        return Err(DataIoError::SplitError("target train set is empty".into()));
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use invlab_core::Modality;
    use std::path::Path;

    fn manifest(root: &str, tag: &str, subjects: &[(&str, usize)]) -> DatasetManifest {
        DatasetManifest {
            root: Path::new(root).to_path_buf(),
            modality: Modality::Face,
            image_size: 64,
            preprocessing_tag: tag.into(),
            subjects: subjects
                .iter()
                .map(|(id, n)| SubjectEntry {
                    id: id.to_string(),
                    files: (0..*n).map(|k| format!("{id}/img{k:02}.png")).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn same_identities_halves_shared_samples() {
        let m = manifest("/data", "pipeline-a", &[("s1", 10), ("s2", 10)]);
        let out = split_disjoint(&m, &m, AttackerDataCondition::SameIdentities).unwrap();
        let att = &out.attacker.subjects;
        assert_eq!(att.len(), 2);
        for s in att {
            assert_eq!(s.files.len(), 5);
            assert!(s.files.iter().all(|f| {
                let k: usize = f[f.len() - 6..f.len() - 4].parse().unwrap();
                k < 5
            }));
        }
        let total_target: usize = out.target_train.sample_count() + out.target_test.sample_count();
        assert_eq!(total_target, 10);
    }

    #[test]
    fn same_preprocessing_disjoint_subjects() {
        let m = manifest("/data", "pipeline-a", &[("s1", 4), ("s2", 4), ("s3", 4), ("s4", 4)]);
        let out = split_disjoint(&m, &m, AttackerDataCondition::SamePreProcessing).unwrap();
        let a: BTreeSet<_> = out.attacker.subject_ids().iter().map(|s| s.to_string()).collect();
        let t: BTreeSet<_> = out
            .target_train
            .subject_ids()
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(a.is_disjoint(&t));
        assert!(!a.is_empty() && !t.is_empty());
    }

    #[test]
    fn diff_preprocessing_requires_different_tags() {
        let a = manifest("/a", "pipeline-a", &[("s1", 4), ("s2", 4)]);
        let b = manifest("/b", "pipeline-a", &[("s3", 4)]);
        assert!(matches!(
            split_disjoint(&a, &b, AttackerDataCondition::DiffPreProcessing),
            Err(DataIoError::SplitError(_))
        ));
        let b2 = manifest("/b", "pipeline-b", &[("s3", 4)]);
        let out = split_disjoint(&a, &b2, AttackerDataCondition::DiffPreProcessing).unwrap();
        assert_eq!(out.attacker.preprocessing_tag, "pipeline-a");
        assert_eq!(out.target_train.preprocessing_tag, "pipeline-b");
    }

    #[test]
    fn single_subject_disjoint_condition_fails() {
        let m = manifest("/data", "pipeline-a", &[("only", 8)]);
        assert!(matches!(
            split_disjoint(&m, &m, AttackerDataCondition::SamePreProcessing),
            Err(DataIoError::SplitError(_))
        ));
    }

    #[test]
    fn target_test_is_last_quarter() {
        let m = manifest("/data", "pipeline-a", &[("s1", 8), ("s2", 8)]);
        let out = split_disjoint(&m, &m, AttackerDataCondition::SameIdentities).unwrap();
        // Each subject gives 4 samples to the target; 1 held out for test.
        for s in &out.target_test.subjects {
            assert_eq!(s.files.len(), 1);
        }
        for s in &out.target_train.subjects {
            assert_eq!(s.files.len(), 3);
        }
    }
}
