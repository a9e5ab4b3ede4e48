//! Identity-classifier training for extractor networks. The same loop backs
//! scratch training and fine-tuning; fine-tuning just narrows the trainable
//! layer set and swaps the class head.

use std::collections::BTreeMap;

use invlab_core::ImageSample;
use invlab_nn::loss::{accuracy, softmax_cross_entropy};
use invlab_nn::{Network, OptimAlgo, Optimizer, Tensor};
use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ZooError;
use crate::registry::ExtractorHandle;
use crate::spec::ExtractorSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub algo: OptimAlgo,
    /// Fraction of each identity's samples held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk_default(seed: u64) -> Self {
        Self {
            epochs: 6,
            batch_size: 32,
            learning_rate: 1e-3,
            algo: OptimAlgo::adam(),
            validation_fraction: 0.15,
            seed,
        }
    }
}

/// Sorted subject ids defining the class indexing of a trained head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub ids: Vec<String>,
}

impl LabelMap {
    pub fn fit(images: &[ImageSample]) -> Self {
        let mut ids: Vec<String> = images
            .iter()
            .map(|i| i.subject_id.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        ids.sort();
        Self { ids }
    }

    pub fn index_of(&self, subject_id: &str) -> Option<usize> {
        self.ids.binary_search_by(|x| x.as_str().cmp(subject_id)).ok()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub validation_accuracy: f64,
    pub classes: Vec<String>,
}

pub(crate) fn batch_tensor(images: &[ImageSample], indices: &[usize]) -> Tensor {
    let (h, w, c) = images[indices[0]].shape();
    let mut x = Array4::<f32>::zeros((indices.len(), c, h, w));
    for (n, &idx) in indices.iter().enumerate() {
        let px = &images[idx].pixels;
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    x[[n, ch, i, j]] = px[[i, j, ch]];
                }
            }
        }
    }
    x.into_dyn()
}

fn eval_accuracy(
    net: &Network,
    images: &[ImageSample],
    indices: &[usize],
    labels: &[usize],
    batch: usize,
) -> Result<f64, ZooError> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(batch) {
        let x = batch_tensor(images, chunk);
        let logits = net.forward(&x)?;
        let chunk_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        correct += (accuracy(&logits, &chunk_labels)? * chunk.len() as f64).round() as usize;
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Trains `network` as an identity classifier over the images' subjects.
/// Label indices follow the sorted subject order of `label_map`, which must
/// cover every image. Only layers left trainable in the network are updated.
pub fn train_classifier(
    network: &mut Network,
    images: &[ImageSample],
    label_map: &LabelMap,
    cfg: &TrainConfig,
) -> Result<TrainReport, ZooError> {
    if images.is_empty() {
        return Err(ZooError::TrainError("no training images".into()));
    }
    if cfg.batch_size == 0 {
        return Err(ZooError::ConfigError("batch size must be > 0".into()));
    }
    let labels: Vec<usize> = images
        .iter()
        .map(|img| {
            label_map.index_of(&img.subject_id).ok_or_else(|| {
                ZooError::TrainError(format!(
                    "subject '{}' missing from the label map",
                    img.subject_id
                ))
            })
        })
        .collect::<Result<_, _>>()?;

    // Per-identity validation split keeps every class present on both sides
    // whenever it has at least two samples.
    let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        per_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (_, mut members) in per_class {
        members.shuffle(&mut rng);
        let held = if members.len() < 2 {
            0
        } else {
            ((members.len() as f64 * cfg.validation_fraction).round() as usize)
                .clamp(1, members.len() - 1)
        };
        let (val, train) = members.split_at(held);
        val_idx.extend_from_slice(val);
        train_idx.extend_from_slice(train);
    }

    let mut optimizer = Optimizer::new(cfg.algo, cfg.learning_rate);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut acc_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let x = batch_tensor(images, chunk);
            let chunk_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (logits, caches) = network.forward_train(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &chunk_labels)?;
            if !loss.is_finite() {
                return Err(ZooError::TrainError(format!(
                    "loss became non-finite at epoch {epoch}"
                )));
            }
            loss_sum += loss;
            acc_sum += accuracy(&logits, &chunk_labels)?;
            batches += 1;
            let (_, grads) = network.backward(&caches, &grad)?;
            optimizer.step(network, &grads)?;
        }
        let val_accuracy =
            eval_accuracy(network, images, &val_idx, &labels, cfg.batch_size)?;
        epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            train_accuracy: acc_sum / batches.max(1) as f64,
            val_accuracy,
        });
    }
    let validation_accuracy = epochs.last().map(|e| e.val_accuracy).unwrap_or(0.0);
    Ok(TrainReport {
        epochs,
        validation_accuracy,
        classes: label_map.ids.clone(),
    })
}

/// Builds the spec's network and trains it from scratch on the images. The
/// image subjects must number exactly the spec's class count.
pub fn train_extractor(
    spec: &ExtractorSpec,
    images: &[ImageSample],
    cfg: &TrainConfig,
) -> Result<(ExtractorHandle, TrainReport), ZooError> {
    let label_map = LabelMap::fit(images);
    if label_map.len() != spec.num_classes {
        return Err(ZooError::ConfigError(format!(
            "dataset has {} identities, spec head expects {}",
            label_map.len(),
            spec.num_classes
        )));
    }
    let mut network = spec.build()?;
    let report = train_classifier(&mut network, images, &label_map, cfg)?;
    Ok((
        ExtractorHandle {
            spec: spec.clone(),
            network,
            checksum: "unregistered".into(),
        },
        report,
    ))
}
