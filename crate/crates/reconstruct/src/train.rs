//! Decoder training: minimizes the mean combined loss over an adversarial
//! image set while the feature extractor stays frozen.

use invlab_core::ImageSample;
use invlab_nn::{OptimAlgo, Optimizer, Tensor};
use invlab_zoo::{EmbedderAt, ExtractorHandle};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{images_to_nchw, ReconstructorHandle};
use crate::error::ReconError;
use crate::loss::{normalize_layer_weights, resolve_tap, LossConfig};
use crate::spec::OUTPUT_SIDE;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub algo: OptimAlgo,
    /// Extraction layer feeding the decoder; inferred from the decoder's
    /// input length when absent.
    pub embed_layer: Option<String>,
    pub seed: u64,
}

impl DecoderTrainConfig {
    /// The published schedule: 200 epochs, batches of 16, accumulated
    /// gradient scaling.
    pub fn paper_default(seed: u64) -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            learning_rate: 0.01,
            algo: OptimAlgo::adagrad(),
            embed_layer: None,
            seed,
        }
    }

    pub fn desk_default(seed: u64) -> Self {
        Self {
            epochs: 40,
            ..Self::paper_default(seed)
        }
    }

    fn validate(&self) -> Result<(), ReconError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ReconError::ConfigError(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(ReconError::ConfigError(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One epoch of the training trace. `layer_weights` were in force during
/// the epoch; the re-balanced weights apply from the next epoch on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub mean_loss: f64,
    pub layer_weights: Vec<f64>,
    /// Mean per-sample feature distance observed this epoch, per layer.
    pub layer_magnitudes: Vec<f64>,
}

pub(crate) fn pick_embed_layer(
    phi: &ExtractorHandle,
    input_length: usize,
    requested: &Option<String>,
) -> Result<String, ReconError> {
    if let Some(id) = requested {
        let ex = phi.spec.extraction_layer(id)?;
        if ex.length != input_length {
            return Err(ReconError::LengthMismatch {
                expected: input_length,
                got: ex.length,
            });
        }
        return Ok(id.clone());
    }
    let matches: Vec<&str> = phi
        .spec
        .extraction
        .iter()
        .filter(|e| e.length == input_length)
        .map(|e| e.layer_id.as_str())
        .collect();
    match matches.as_slice() {
        [one] => Ok(one.to_string()),
        [] => Err(ReconError::ConfigError(format!(
            "'{}' exposes no extraction layer of length {input_length}",
            phi.spec.model_id
        ))),
        many => Err(ReconError::ConfigError(format!(
            "'{}' has several length-{input_length} layers {many:?}; set embed_layer",
            phi.spec.model_id
        ))),
    }
}

/// Trains a copy of the decoder against `(embedding, image)` pairs drawn
/// from `images` through the frozen extractor. Returns the trained decoder
/// and the per-epoch trace.
pub fn train_reconstructor(
    decoder: &ReconstructorHandle,
    phi: &ExtractorHandle,
    images: &[ImageSample],
    loss: &LossConfig,
    cfg: &DecoderTrainConfig,
) -> Result<(ReconstructorHandle, Vec<EpochTrace>), ReconError> {
    cfg.validate()?;
    loss.validate()?;
    if loss.pixel_weight == 0.0 && loss.layers.is_empty() {
        return Err(ReconError::ConfigError(
            "loss has neither a pixel term nor feature terms".into(),
        ));
    }
    let taps: Vec<usize> = loss
        .layers
        .iter()
        .map(|t| resolve_tap(&phi.spec, &t.layer_id))
        .collect::<Result<_, _>>()?;
    let embed_layer = pick_embed_layer(phi, decoder.spec.input_length, &cfg.embed_layer)?;
    if phi.spec.input_size != OUTPUT_SIDE {
        return Err(ReconError::ConfigError(format!(
            "extractor reads {0}x{0} images, decoder emits {1}x{1}",
            phi.spec.input_size, OUTPUT_SIDE
        )));
    }
    if images.is_empty() {
        return Err(ReconError::ConfigError("no training images".into()));
    }

    // The extractor is frozen, so embeddings are computed once up front.
    let embedder = EmbedderAt::new(phi.clone(), &embed_layer)?;
    let refs: Vec<&ImageSample> = images.iter().collect();
    let all_x = images_to_nchw(&refs)?;
    let emb_len = decoder.spec.input_length;
    let mut all_e = Array2::<f32>::zeros((images.len(), emb_len));
    for (chunk_start, chunk) in refs.chunks(64).enumerate().map(|(i, c)| (i * 64, c)) {
        let xb = images_to_nchw(chunk)?;
        for (row, vec) in embedder.embed_nchw(&xb)?.into_iter().enumerate() {
            all_e.row_mut(chunk_start + row).assign(&Array1::from_vec(vec));
        }
    }

    let mut net = decoder.network.clone();
    let mut optimizer = Optimizer::new(cfg.algo.clone(), cfg.learning_rate);
    let mut weights: Vec<f64> = loss.layers.iter().map(|t| t.weight).collect();
    let mut trace: Vec<EpochTrace> = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let n = images.len();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut mag_sums = vec![0.0f64; taps.len()];

        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut xb = Tensor::zeros(vec![b, 3, OUTPUT_SIDE, OUTPUT_SIDE]);
            let mut eb = Array2::<f32>::zeros((b, emb_len));
            for (row, &idx) in batch.iter().enumerate() {
                xb.index_axis_mut(Axis(0), row)
                    .assign(&all_x.index_axis(Axis(0), idx));
                eb.row_mut(row).assign(&all_e.row(idx));
            }
            let eb = eb.into_dyn();

            let (yb, g_caches) = net.forward_train(&eb)?;
            let mut gy = Tensor::zeros(yb.raw_dim());
            let mut batch_loss = 0.0f64;

            let diff = &yb - &xb;
            for row in 0..b {
                let d = diff.index_axis(Axis(0), row);
                let ss: f64 = d.iter().map(|&v| (v as f64) * (v as f64)).sum();
                if loss.squared_norms {
                    batch_loss += loss.pixel_weight * ss;
                    gy.index_axis_mut(Axis(0), row)
                        .scaled_add(2.0 * loss.pixel_weight as f32 / b as f32, &d);
                } else {
                    let norm = ss.sqrt();
                    batch_loss += loss.pixel_weight * norm;
                    if norm > f64::EPSILON {
                        let factor = (loss.pixel_weight / norm) as f32 / b as f32;
                        gy.index_axis_mut(Axis(0), row).scaled_add(factor, &d);
                    }
                }
            }

            if !taps.is_empty() {
                let (_, x_taps) = phi.network.forward_taps(&xb, &taps)?;
                let (y_outs, p_caches) = phi.network.forward_eval_cached(&yb)?;
                let mut cotangents = Vec::with_capacity(taps.len());
                for (l, (&tap, x_tap)) in taps.iter().zip(&x_taps).enumerate() {
                    let mut fdiff = &y_outs[tap] - x_tap;
                    for row in 0..b {
                        let d = fdiff.index_axis(Axis(0), row);
                        let ss: f64 = d.iter().map(|&v| (v as f64) * (v as f64)).sum();
                        let norm = ss.sqrt();
                        mag_sums[l] += if loss.squared_norms { ss } else { norm };
                        let factor = if loss.squared_norms {
                            batch_loss += weights[l] * ss;
                            2.0 * weights[l] as f32 / b as f32
                        } else {
                            batch_loss += weights[l] * norm;
                            if norm <= f64::EPSILON {
                                fdiff.index_axis_mut(Axis(0), row).fill(0.0);
                                continue;
                            }
                            (weights[l] / norm) as f32 / b as f32
                        };
                        fdiff
                            .index_axis_mut(Axis(0), row)
                            .mapv_inplace(|v| v * factor);
                    }
                    cotangents.push((tap, fdiff));
                }
                let gx = phi.network.backward_to_input(&p_caches, &cotangents)?;
                gy += &gx;
            }

            if !batch_loss.is_finite() {
                return Err(ReconError::Diverged { epoch, trace });
            }
            epoch_loss += batch_loss;

            let (_, grads) = net.backward(&g_caches, &gy)?;
            optimizer.step(&mut net, &grads)?;
        }

        let magnitudes: Vec<f64> = mag_sums.iter().map(|s| s / n as f64).collect();
        trace.push(EpochTrace {
            epoch,
            mean_loss: epoch_loss / n as f64,
            layer_weights: weights.clone(),
            layer_magnitudes: magnitudes.clone(),
        });
        if !taps.is_empty() {
            weights = normalize_layer_weights(&weights, &magnitudes)?;
        }
    }

    Ok((
        ReconstructorHandle {
            spec: decoder.spec.clone(),
            network: net,
            init_seed: decoder.init_seed,
        },
        trace,
    ))
}
