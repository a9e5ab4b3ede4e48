//! Desk-scale end-to-end checks: a trained pool model hits the recognition
//! target, registered pool members are distinguishable from their
//! embeddings alone, and the fine-tuning ladder moves embeddings
//! monotonically.

use invlab_core::Modality;
use invlab_dataio::{generate_dataset, SynthConfig};
use invlab_zoo::{
    desk_ladder, desk_pool, embedding_displacement, evaluate_recognition, extract_embeddings,
    fine_tune, train_extractor, FineTuneConfig, Registry, TrainConfig,
};

#[test]
fn trained_pool_model_meets_recognition_target_on_fifty_identities() {
    let mut cfg = SynthConfig::desk_default(50, 14, 41);
    cfg.image_size = 32;
    let all = generate_dataset(&cfg).unwrap();
    let train: Vec<_> = all
        .iter()
        .filter(|s| s.sample_id.as_str() < "sample_010")
        .cloned()
        .collect();
    let held: Vec<_> = all
        .iter()
        .filter(|s| s.sample_id.as_str() >= "sample_010")
        .cloned()
        .collect();
    assert_eq!(train.len(), 500);
    assert_eq!(held.len(), 200);

    let spec = desk_pool(Modality::Face, 32, 50, 17).unwrap().remove(0);
    let mut train_cfg = TrainConfig::desk_default(17);
    train_cfg.epochs = 10;
    let (handle, report) = train_extractor(&spec, &train, &train_cfg).unwrap();
    assert!(report.validation_accuracy > 0.5, "training failed to converge");

    let rec = evaluate_recognition(&handle, "emb", &held, 0.01, 7).unwrap();
    assert_eq!(rec.test_identity_count, 50);
    assert!(
        rec.identification_accuracy >= 0.90,
        "identification {} below desk target 0.90",
        rec.identification_accuracy
    );
    assert!(rec.tar >= 0.0 && rec.tar <= 1.0);
    assert!((rec.far_target - 0.01).abs() < 1e-12);
}

#[test]
fn registered_pool_members_differ_on_every_probe() {
    let dir = tempfile::tempdir().unwrap();
    let registry = Registry::create(dir.path()).unwrap();
    let specs = desk_pool(Modality::Generic, 32, 10, 23).unwrap();
    assert_eq!(specs.len(), 4);
    let mut handles = Vec::new();
    for spec in &specs {
        let network = spec.build().unwrap();
        handles.push(registry.register(spec, &network).unwrap());
    }
    let mut ids: Vec<_> = handles.iter().map(|h| h.spec.model_id.clone()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 4, "pool ids must be distinct");

    let mut cfg = SynthConfig::desk_default(25, 4, 59);
    cfg.image_size = 32;
    let probes = generate_dataset(&cfg).unwrap();
    assert_eq!(probes.len(), 100);
    let per_model: Vec<_> = handles
        .iter()
        .map(|h| extract_embeddings(h, &probes, "emb").unwrap())
        .collect();
    for a in 0..per_model.len() {
        for b in a + 1..per_model.len() {
            for (ra, rb) in per_model[a].iter().zip(&per_model[b]) {
                let differs = ra
                    .vector
                    .iter()
                    .zip(&rb.vector)
                    .any(|(x, y)| (x - y).abs() > 0.0);
                assert!(
                    differs,
                    "models {} and {} agree exactly on {}",
                    handles[a].spec.model_id,
                    handles[b].spec.model_id,
                    ra.sample_id
                );
            }
        }
    }
}

#[test]
fn ladder_displacement_is_non_decreasing_on_five_hundred_probes() {
    let mut cfg = SynthConfig::desk_default(6, 10, 31);
    cfg.image_size = 32;
    let pretrain = generate_dataset(&cfg).unwrap();
    let spec = desk_pool(Modality::Face, 32, 6, 29).unwrap().remove(1);
    let mut train_cfg = TrainConfig::desk_default(29);
    train_cfg.epochs = 4;
    let (source, _) = train_extractor(&spec, &pretrain, &train_cfg).unwrap();

    let mut new_cfg = SynthConfig::desk_default(32, 8, 83);
    new_cfg.image_size = 32;
    let new_identities = generate_dataset(&new_cfg).unwrap();

    let mut probe_cfg = SynthConfig::desk_default(50, 10, 97);
    probe_cfg.image_size = 32;
    let probes = generate_dataset(&probe_cfg).unwrap();
    assert_eq!(probes.len(), 500);

    let mut displacements = vec![0.0f64]; // level zero: the source itself
    for config in desk_ladder(&source.spec).unwrap() {
        let (tuned, _) = fine_tune(&source, &new_identities, &config, 61).unwrap();
        displacements.push(embedding_displacement(&source, &tuned, &probes, "emb").unwrap());
    }
    for w in displacements.windows(2) {
        assert!(
            w[1] >= w[0],
            "displacement inverted along the ladder: {displacements:?}"
        );
    }
    assert!(
        displacements[5] > displacements[1],
        "deepest level did not move embeddings more than head-only tuning: {displacements:?}"
    );
}

#[test]
fn head_only_tuning_reaches_validation_floor() {
    let mut cfg = SynthConfig::desk_default(6, 10, 31);
    cfg.image_size = 32;
    let pretrain = generate_dataset(&cfg).unwrap();
    let spec = desk_pool(Modality::Face, 32, 6, 37).unwrap().remove(0);
    let mut train_cfg = TrainConfig::desk_default(37);
    train_cfg.epochs = 6;
    let (source, _) = train_extractor(&spec, &pretrain, &train_cfg).unwrap();

    let mut new_cfg = SynthConfig::desk_default(4, 12, 101);
    new_cfg.image_size = 32;
    let new_identities = generate_dataset(&new_cfg).unwrap();

    let config = FineTuneConfig {
        level: invlab_core::FtLevel::Ft1,
        dataset_range: (8, 100_000),
        opened_blocks: vec!["head".into()],
        epochs_per_block: vec![15],
        validation_floor: 0.95,
        batch_size: 16,
        learning_rate: 1e-3,
    };
    let (_, report) = fine_tune(&source, &new_identities, &config, 43).unwrap();
    assert!(
        report.met_floor,
        "validation accuracy {} below the 0.95 floor: {:?}",
        report.validation_accuracy, report.warning
    );
}
