//! Fine-tuning schedules: adapt a pretrained extractor to a new identity set
//! by reinitializing the class head and training progressively opened
//! architecture blocks. Levels form a ladder of increasing intensity.

use invlab_core::{FtLevel, ImageSample};
use invlab_nn::{Layer, LayerSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::extract_embeddings;
use crate::error::ZooError;
use crate::registry::ExtractorHandle;
use crate::spec::ExtractorSpec;
use crate::train::{train_classifier, LabelMap, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub level: FtLevel,
    /// Admissible dataset sizes (inclusive). Below the range is refused;
    /// above it the set is truncated deterministically.
    pub dataset_range: (usize, usize),
    /// Blocks opened for training, in phase order. Phase `i` trains with
    /// blocks `0..=i` trainable for `epochs_per_block[i]` epochs.
    pub opened_blocks: Vec<String>,
    pub epochs_per_block: Vec<usize>,
    pub validation_floor: f64,
    pub batch_size: usize,
    pub learning_rate: f32,
}

impl FineTuneConfig {
    pub fn validate(&self, spec: &ExtractorSpec) -> Result<(), ZooError> {
        if self.opened_blocks.len() != self.epochs_per_block.len() {
            return Err(ZooError::ConfigError(format!(
                "{} opened blocks but {} epoch counts",
                self.opened_blocks.len(),
                self.epochs_per_block.len()
            )));
        }
        if self.dataset_range.0 > self.dataset_range.1 {
            return Err(ZooError::ConfigError("empty dataset range".into()));
        }
        for block_id in &self.opened_blocks {
            spec.block(block_id)?;
        }
        Ok(())
    }
}

/// Checks that levels open supersets of blocks and admit at least as much
/// data as the level below.
pub fn validate_ladder(configs: &[FineTuneConfig]) -> Result<(), ZooError> {
    for pair in configs.windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        if hi.level <= lo.level {
            return Err(ZooError::ConfigError(format!(
                "ladder levels out of order: {} then {}",
                lo.level, hi.level
            )));
        }
        for block in &lo.opened_blocks {
            if !hi.opened_blocks.contains(block) {
                return Err(ZooError::ConfigError(format!(
                    "{} opens '{block}' but {} does not",
                    lo.level, hi.level
                )));
            }
        }
        if hi.dataset_range.0 < lo.dataset_range.0 {
            return Err(ZooError::ConfigError(format!(
                "{} admits smaller datasets than {}",
                hi.level, lo.level
            )));
        }
    }
    Ok(())
}

/// Ladder of fine-tuning configs for a spec. Each level opens one deeper
/// conv block beyond the head and admits strictly more data than the level
/// below; a larger new-identity set forces a larger functional change, so
/// embedding displacement grows with the level. Callers pass one dataset to
/// every level and lower levels truncate it to their cap.
pub fn desk_ladder(spec: &ExtractorSpec) -> Result<Vec<FineTuneConfig>, ZooError> {
    let mut order: Vec<String> = vec!["head".to_string()];
    // Deeper blocks open from the top of the conv stack downward.
    let mut conv_ids: Vec<String> = spec
        .blocks
        .iter()
        .map(|b| b.block_id.clone())
        .filter(|id| id != "head")
        .collect();
    conv_ids.reverse();
    order.extend(conv_ids);

    let levels = [
        (FtLevel::Ft1, (8, 24), 4),
        (FtLevel::Ft2, (24, 48), 4),
        (FtLevel::Ft3, (48, 96), 5),
        (FtLevel::Ft4, (96, 160), 5),
        (FtLevel::Ft5, (160, 100_000), 6),
    ];
    let configs = levels
        .iter()
        .enumerate()
        .map(|(i, &(level, dataset_range, epochs))| {
            let open = (i + 1).min(order.len());
            FineTuneConfig {
                level,
                dataset_range,
                opened_blocks: order[..open].to_vec(),
                epochs_per_block: vec![epochs; open],
                validation_floor: 0.95,
                batch_size: 16,
                learning_rate: 1e-3,
            }
        })
        .collect::<Vec<_>>();
    for c in &configs {
        c.validate(spec)?;
    }
    validate_ladder(&configs)?;
    Ok(configs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FineTuneReport {
    pub validation_accuracy: f64,
    pub met_floor: bool,
    pub warning: Option<String>,
    /// (block id, epochs actually run) per phase.
    pub phases: Vec<(String, usize)>,
}

/// Fine-tunes onto a new identity dataset, returning a fresh handle whose
/// lineage records the source model. The source handle is never modified.
///
/// A config opening zero blocks is a pure copy: weights, head, and
/// embeddings stay identical to the source.
pub fn fine_tune(
    source: &ExtractorHandle,
    dataset: &[ImageSample],
    config: &FineTuneConfig,
    seed: u64,
) -> Result<(ExtractorHandle, FineTuneReport), ZooError> {
    config.validate(&source.spec)?;
    if dataset.len() < config.dataset_range.0 {
        return Err(ZooError::ConfigError(format!(
            "{} samples, {} requires at least {}",
            dataset.len(),
            config.level,
            config.dataset_range.0
        )));
    }
    let mut warning = None;
    let dataset = if dataset.len() > config.dataset_range.1 {
        warning = Some(format!(
            "dataset truncated from {} to {} samples",
            dataset.len(),
            config.dataset_range.1
        ));
        &dataset[..config.dataset_range.1]
    } else {
        dataset
    };

    let mut spec = source.spec.clone();
    spec.pretraining_tag = source.spec.model_id.clone();
    spec.model_id = format!("{}-{}", source.spec.model_id, config.level);
    let mut network = source.network.clone();

    if config.opened_blocks.is_empty() {
        spec.validate()?;
        return Ok((
            ExtractorHandle {
                spec,
                network,
                checksum: "unregistered".into(),
            },
            FineTuneReport {
                validation_accuracy: 0.0,
                met_floor: true,
                warning: Some("no blocks opened; weights copied unchanged".into()),
                phases: vec![],
            },
        ));
    }

    // Fresh class head sized to the new identity set.
    let label_map = LabelMap::fit(dataset);
    if label_map.len() < 2 {
        return Err(ZooError::ConfigError(
            "fine-tuning needs at least two identities".into(),
        ));
    }
    let head_index = spec.layers.len() - 1;
    let emb_len = match spec.layers[head_index] {
        LayerSpec::Dense { in_features, .. } => in_features,
        _ => {
            return Err(ZooError::ConfigError(
                "architecture does not end in a dense class head".into(),
            ))
        }
    };
    spec.layers[head_index] = LayerSpec::Dense {
        in_features: emb_len,
        out_features: label_map.len(),
    };
    spec.num_classes = label_map.len();
    spec.seed = seed;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    network.layers_mut()[head_index] = Layer::dense(emb_len, label_map.len(), &mut rng);

    let mut phases = Vec::new();
    let mut report = None;
    for (phase, (block_id, &epochs)) in config
        .opened_blocks
        .iter()
        .zip(&config.epochs_per_block)
        .enumerate()
    {
        network.set_all_trainable(false);
        for opened in &config.opened_blocks[..=phase] {
            for &layer in &source.spec.block(opened)?.layers {
                network.set_trainable(layer, true);
            }
        }
        let cfg = TrainConfig {
            epochs,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            algo: invlab_nn::OptimAlgo::adam(),
            validation_fraction: 0.2,
            seed: seed.wrapping_add(phase as u64),
        };
        report = Some(train_classifier(&mut network, dataset, &label_map, &cfg)?);
        phases.push((block_id.clone(), epochs));
    }
    network.set_all_trainable(true);

    let validation_accuracy = report
        .as_ref()
        .map(|r| r.validation_accuracy)
        .unwrap_or(0.0);
    let met_floor = validation_accuracy >= config.validation_floor;
    if !met_floor {
        warning = Some(format!(
            "validation accuracy {validation_accuracy:.3} below floor {:.3}",
            config.validation_floor
        ));
    }
    Ok((
        ExtractorHandle {
            spec,
            network,
            checksum: "unregistered".into(),
        },
        FineTuneReport {
            validation_accuracy,
            met_floor,
            warning,
            phases,
        },
    ))
}

/// Mean L2 distance between two extractors' embeddings over a probe set, at
/// the given extraction layer.
pub fn embedding_displacement(
    a: &ExtractorHandle,
    b: &ExtractorHandle,
    probes: &[ImageSample],
    layer_id: &str,
) -> Result<f64, ZooError> {
    if probes.is_empty() {
        return Err(ZooError::ConfigError("empty probe set".into()));
    }
    let ea = extract_embeddings(a, probes, layer_id)?;
    let eb = extract_embeddings(b, probes, layer_id)?;
    let mut total = 0.0f64;
    for (ra, rb) in ea.iter().zip(&eb) {
        if ra.vector.len() != rb.vector.len() {
            return Err(ZooError::ConfigError(
                "extractors produce different embedding lengths".into(),
            ));
        }
        let mut acc = 0.0f64;
        for i in 0..ra.vector.len() {
            let d = ra.vector[i] as f64 - rb.vector[i] as f64;
            acc += d * d;
        }
        total += acc.sqrt();
    }
    Ok(total / probes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{cnn_spec, ActChoice, CnnKnobs, Downsample};
    use crate::train::{train_extractor, TrainConfig};
    use invlab_core::Modality;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    fn dataset(identities: usize, samples: usize, offset: usize) -> Vec<ImageSample> {
        let mut out = Vec::new();
        for s in 0..identities {
            for x in 0..samples {
                let sid = s + offset;
                let mut rng = ChaCha8Rng::seed_from_u64((sid * 131 + x) as u64);
                let base = (sid as f32 * 0.23) % 0.85;
                let px = Array3::from_shape_fn((16, 16, 3), |(i, j, ch)| {
                    (base
                        + 0.18 * (((i * (sid + 2) + j) % 5) as f32 / 5.0)
                        + 0.02 * ch as f32
                        + rng.gen_range(-0.02..0.02))
                    .clamp(0.0, 1.0)
                });
                out.push(
                    ImageSample::new(
                        px,
                        format!("subject_{sid:03}"),
                        format!("sample_{x:03}"),
                        "raw",
                    )
                    .unwrap(),
                );
            }
        }
        out
    }

    fn trained_source() -> ExtractorHandle {
        let spec = cnn_spec(
            "src",
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
            3,
            11,
        )
        .unwrap();
        let mut cfg = TrainConfig::desk_default(2);
        cfg.epochs = 3;
        let (handle, _) = train_extractor(&spec, &dataset(3, 6, 0), &cfg).unwrap();
        handle
    }

    #[test]
    fn ladder_opens_supersets() {
        let source = trained_source();
        let ladder = desk_ladder(&source.spec).unwrap();
        assert_eq!(ladder.len(), 5);
        validate_ladder(&ladder).unwrap();
        assert_eq!(ladder[0].opened_blocks, vec!["head".to_string()]);
        assert!(ladder[4].opened_blocks.len() >= ladder[1].opened_blocks.len());
    }

    #[test]
    fn noop_schedule_preserves_embeddings_exactly() {
        let source = trained_source();
        let config = FineTuneConfig {
            level: FtLevel::Ft1,
            dataset_range: (1, 1000),
            opened_blocks: vec![],
            epochs_per_block: vec![],
            validation_floor: 0.0,
            batch_size: 8,
            learning_rate: 1e-3,
        };
        let probes = dataset(3, 2, 50);
        let (tuned, report) = fine_tune(&source, &dataset(2, 6, 10), &config, 9).unwrap();
        assert_eq!(
            embedding_displacement(&source, &tuned, &probes, "emb").unwrap(),
            0.0
        );
        assert!(report.phases.is_empty());
        assert_eq!(tuned.spec.pretraining_tag, "src");
    }

    #[test]
    fn fine_tune_never_mutates_the_source() {
        let source = trained_source();
        let probes = dataset(3, 2, 50);
        let before = extract_embeddings(&source, &probes, "emb").unwrap();
        let ladder = desk_ladder(&source.spec).unwrap();
        let (_, _report) = fine_tune(&source, &dataset(4, 8, 10), &ladder[1], 13).unwrap();
        let after = extract_embeddings(&source, &probes, "emb").unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.vector, b.vector, "source embeddings changed");
        }
    }

    #[test]
    fn deeper_levels_move_embeddings_further() {
        let source = trained_source();
        let ft_data = dataset(20, 8, 10);
        let probes = dataset(6, 3, 80);
        let ladder = desk_ladder(&source.spec).unwrap();
        let (ft1, _) = fine_tune(&source, &ft_data, &ladder[0], 21).unwrap();
        let (ft5, _) = fine_tune(&source, &ft_data, &ladder[4], 21).unwrap();
        let d1 = embedding_displacement(&source, &ft1, &probes, "emb").unwrap();
        let d5 = embedding_displacement(&source, &ft5, &probes, "emb").unwrap();
        // FT1 trains only the head, which sits after the extraction layer,
        // so the embedding itself moves only when deeper blocks open.
        assert!(
            d5 > d1,
            "FT5 displacement {d5} not larger than FT1 displacement {d1}"
        );
    }

    #[test]
    fn dataset_below_range_is_refused() {
        let source = trained_source();
        let ladder = desk_ladder(&source.spec).unwrap();
        let tiny = dataset(2, 2, 10);
        assert!(matches!(
            fine_tune(&source, &tiny, &ladder[2], 3),
            Err(ZooError::ConfigError(_))
        ));
    }

    #[test]
    fn lineage_is_recorded() {
        let source = trained_source();
        let ladder = desk_ladder(&source.spec).unwrap();
        let (tuned, _) = fine_tune(&source, &dataset(4, 8, 10), &ladder[0], 5).unwrap();
        assert_eq!(tuned.spec.pretraining_tag, "src");
        assert_eq!(tuned.spec.model_id, "src-ft1");
        assert_eq!(source.spec.pretraining_tag, "scratch");
    }
}
