//! Small dense classifier shared by the model-attribution and attribute
//! prediction heads: a rectified stack of shrinking widths trained with
//! early stopping on a stratified validation split.

use std::collections::BTreeMap;

use invlab_nn::loss::{accuracy, softmax_cross_entropy};
use invlab_nn::{build_network, LayerSpec, Network, OptimAlgo, Optimizer, Tensor};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::InferError;

pub fn mlp_specs(input_len: usize, hidden: &[usize], n_classes: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() * 2 + 1);
    let mut prev = input_len;
    for &w in hidden {
        specs.push(LayerSpec::Dense {
            in_features: prev,
            out_features: w,
        });
        specs.push(LayerSpec::relu());
        prev = w;
    }
    specs.push(LayerSpec::Dense {
        in_features: prev,
        out_features: n_classes,
    });
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub algo: OptimAlgo,
    /// Fraction of each class held out for validation and early stopping.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Early stopping never fires before this many epochs, which covers
    /// inits whose validation accuracy plateaus at chance before learning
    /// starts.
    pub min_epochs: usize,
    pub seed: u64,
}

impl MlpTrainConfig {
    pub fn desk_default(seed: u64) -> Self {
        Self {
            max_epochs: 60,
            batch_size: 64,
            learning_rate: 3e-3,
            algo: OptimAlgo::adam(),
            validation_fraction: 0.1,
            patience: 12,
            min_epochs: 20,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<FitEpoch>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

fn vector_batch(x: &Array2<f32>, idx: &[usize]) -> Tensor {
    let d = x.ncols();
    let mut out = Array2::<f32>::zeros((idx.len(), d));
    for (n, &i) in idx.iter().enumerate() {
        out.row_mut(n).assign(&x.row(i));
    }
    out.into_dyn()
}

fn network_accuracy(
    net: &Network,
    x: &Array2<f32>,
    idx: &[usize],
    labels: &[usize],
    batch: usize,
) -> Result<f64, InferError> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in idx.chunks(batch) {
        let logits = net.forward(&vector_batch(x, chunk))?;
        let chunk_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        correct += (accuracy(&logits, &chunk_labels)? * chunk.len() as f64).round() as usize;
    }
    Ok(correct as f64 / idx.len() as f64)
}

/// Trains a fresh MLP on row vectors of `x`. Keeps the weights from the
/// best validation epoch, stopping once `patience` epochs pass without
/// improvement.
pub fn fit_mlp(
    x: &Array2<f32>,
    labels: &[usize],
    n_classes: usize,
    hidden: &[usize],
    cfg: &MlpTrainConfig,
) -> Result<(Network, FitReport), InferError> {
    if x.nrows() == 0 || x.nrows() != labels.len() {
        return Err(InferError::TrainError(format!(
            "{} training rows with {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(InferError::ConfigError(
            "batch size and epoch count must be > 0".into(),
        ));
    }

    let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(InferError::TrainError(format!(
                "label {l} out of range for {n_classes} classes"
            )));
        }
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

    let mut network = build_network(&mlp_specs(x.ncols(), hidden, n_classes), cfg.seed)?;
    let mut optimizer = Optimizer::new(cfg.algo, cfg.learning_rate);
    let mut epochs = Vec::new();
    let mut best = network.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let xb = vector_batch(x, chunk);
            let chunk_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (logits, caches) = network.forward_train(&xb)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &chunk_labels)?;
            if !loss.is_finite() {
                return Err(InferError::TrainError(format!(
                    "loss became non-finite at epoch {epoch}"
                )));
            }
            loss_sum += loss;
            batches += 1;
            let (_, grads) = network.backward(&caches, &grad)?;
            optimizer.step(&mut network, &grads)?;
        }
        let val_accuracy = network_accuracy(&network, x, &val_idx, labels, cfg.batch_size)?;
        epochs.push(FitEpoch {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_accuracy,
        });
        if val_accuracy > best_val {
            best_val = val_accuracy;
            best_epoch = epoch;
            best = network.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience && epoch + 1 >= cfg.min_epochs {
                stopped_early = true;
                break;
            }
        }
    }
    Ok((
        best,
        FitReport {
            epochs,
            best_epoch,
            best_val_accuracy: best_val,
            stopped_early,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n_per: usize, d: usize, classes: usize, seed: u64) -> (Array2<f32>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::<f32>::zeros((n_per * classes, d));
        let mut y = Vec::with_capacity(n_per * classes);
        for c in 0..classes {
            for i in 0..n_per {
                let row = c * n_per + i;
                for j in 0..d {
                    let center = if j % classes == c { 1.0 } else { 0.0 };
                    x[[row, j]] = center + rng.gen_range(-0.3..0.3f32);
                }
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(40, 16, 3, 1);
        let cfg = MlpTrainConfig::desk_default(2);
        let (net, report) = fit_mlp(&x, &y, 3, &[32, 16], &cfg).unwrap();
        assert!(
            report.best_val_accuracy >= 0.9,
            "val accuracy {}",
            report.best_val_accuracy
        );
        let all: Vec<usize> = (0..x.nrows()).collect();
        let train_acc = network_accuracy(&net, &x, &all, &y, 64).unwrap();
        assert!(train_acc >= 0.9, "train accuracy {train_acc}");
    }

    #[test]
    fn early_stopping_triggers_on_flat_validation() {
        // Point-mass duplicate classes cannot improve beyond chance, so the
        // patience window must end training before the epoch cap.
        let mut x = Array2::<f32>::zeros((60, 8));
        for i in 0..60 {
            for j in 0..8 {
                x[[i, j]] = 0.5;
            }
        }
        let y: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let mut cfg = MlpTrainConfig::desk_default(3);
        cfg.max_epochs = 200;
        cfg.patience = 5;
        let (_, report) = fit_mlp(&x, &y, 2, &[16], &cfg).unwrap();
        assert!(report.stopped_early);
        assert!(report.epochs.len() < 200);
    }

    #[test]
    fn fit_is_deterministic_for_a_seed() {
        let (x, y) = blobs(20, 8, 2, 5);
        let cfg = MlpTrainConfig::desk_default(9);
        let (net_a, rep_a) = fit_mlp(&x, &y, 2, &[16, 8], &cfg).unwrap();
        let (net_b, rep_b) = fit_mlp(&x, &y, 2, &[16, 8], &cfg).unwrap();
        assert_eq!(rep_a.best_epoch, rep_b.best_epoch);
        let probe = vector_batch(&x, &[0, 1, 2]);
        assert_eq!(
            net_a.forward(&probe).unwrap(),
            net_b.forward(&probe).unwrap()
        );
    }

    #[test]
    fn label_out_of_range_is_refused() {
        let (x, _) = blobs(4, 4, 2, 7);
        let y = vec![0usize; 7].into_iter().chain([5usize]).collect::<Vec<_>>();
        let cfg = MlpTrainConfig::desk_default(1);
        assert!(matches!(
            fit_mlp(&x, &y, 2, &[8], &cfg),
            Err(InferError::TrainError(_))
        ));
    }
}

