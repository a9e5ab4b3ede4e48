//! Combined pixel/perceptual reconstruction loss over a frozen feature
//! extractor, with online re-balancing of the per-layer weights.

use invlab_core::ImageSample;
use invlab_nn::Tensor;
use invlab_zoo::{ExtractorHandle, ExtractorSpec};
use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::decoder::images_to_nchw;
use crate::error::ReconError;

/// One selected feature tap and its current weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTerm {
    pub layer_id: String,
    pub weight: f64,
}

/// Loss shape: a pixel term plus weighted feature-space terms. Taps not
/// listed carry weight zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub pixel_weight: f64,
    pub layers: Vec<LayerTerm>,
    /// Square every norm instead of using plain Euclidean distances.
    pub squared_norms: bool,
}

impl LossConfig {
    pub fn pixel_only(pixel_weight: f64) -> Self {
        Self {
            pixel_weight,
            layers: Vec::new(),
            squared_norms: false,
        }
    }

    /// Selected taps start at equal weights summing to one.
    pub fn uniform(pixel_weight: f64, layer_ids: &[String]) -> Self {
        let n = layer_ids.len().max(1) as f64;
        Self {
            pixel_weight,
            layers: layer_ids
                .iter()
                .map(|id| LayerTerm {
                    layer_id: id.clone(),
                    weight: 1.0 / n,
                })
                .collect(),
            squared_norms: false,
        }
    }

    pub fn validate(&self) -> Result<(), ReconError> {
        if !self.pixel_weight.is_finite() || self.pixel_weight < 0.0 {
            return Err(ReconError::ConfigError(format!(
                "pixel weight must be finite and non-negative, got {}",
                self.pixel_weight
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for term in &self.layers {
            if !term.weight.is_finite() || term.weight < 0.0 {
                return Err(ReconError::ConfigError(format!(
                    "weight of layer '{}' must be finite and non-negative",
                    term.layer_id
                )));
            }
            if !seen.insert(term.layer_id.as_str()) {
                return Err(ReconError::ConfigError(format!(
                    "layer '{}' listed twice",
                    term.layer_id
                )));
            }
        }
        Ok(())
    }
}

/// Taps usable as perceptual terms: every named block output plus every
/// declared extraction layer, ordered by network depth.
pub fn eligible_perceptual_layers(spec: &ExtractorSpec) -> Vec<String> {
    let mut taps: Vec<(usize, String)> = Vec::new();
    for block in &spec.blocks {
        if let Some(&last) = block.layers.last() {
            taps.push((last, block.block_id.clone()));
        }
    }
    for ex in &spec.extraction {
        taps.push((ex.layer_index, ex.layer_id.clone()));
    }
    taps.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut seen = std::collections::BTreeSet::new();
    taps.into_iter()
        .filter(|(_, id)| seen.insert(id.clone()))
        .map(|(_, id)| id)
        .collect()
}

/// Maps a tap id to the index of the layer producing it.
pub(crate) fn resolve_tap(spec: &ExtractorSpec, layer_id: &str) -> Result<usize, ReconError> {
    if let Ok(ex) = spec.extraction_layer(layer_id) {
        return Ok(ex.layer_index);
    }
    if let Ok(block) = spec.block(layer_id) {
        return Ok(*block.layers.last().expect("blocks are non-empty"));
    }
    Err(ReconError::LayerError(format!(
        "'{layer_id}' is not a tap of '{}'; eligible: {:?}",
        spec.model_id,
        eligible_perceptual_layers(spec)
    )))
}

fn norm_of(diff: &Tensor, squared: bool) -> f64 {
    let ss: f64 = diff.iter().map(|&v| (v as f64) * (v as f64)).sum();
    if squared {
        ss
    } else {
        ss.sqrt()
    }
}

/// Pixel term plus weighted feature-space distances between the two images.
pub fn reconstruction_loss(
    x: &ImageSample,
    x_hat: &ImageSample,
    phi: &ExtractorHandle,
    config: &LossConfig,
) -> Result<f64, ReconError> {
    Ok(loss_with_gradient(x, x_hat, phi, config, false)?.0)
}

/// Loss and its gradient with respect to the reconstruction's pixels, laid
/// out like the image (height, width, channel).
pub fn reconstruction_loss_grad(
    x: &ImageSample,
    x_hat: &ImageSample,
    phi: &ExtractorHandle,
    config: &LossConfig,
) -> Result<(f64, Array3<f32>), ReconError> {
    let (loss, grad) = loss_with_gradient(x, x_hat, phi, config, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn loss_with_gradient(
    x: &ImageSample,
    x_hat: &ImageSample,
    phi: &ExtractorHandle,
    config: &LossConfig,
    want_grad: bool,
) -> Result<(f64, Option<Array3<f32>>), ReconError> {
    config.validate()?;
    if x.shape() != x_hat.shape() {
        return Err(ReconError::ConfigError(format!(
            "image shapes differ: {:?} vs {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    let xb = images_to_nchw(&[x])?;
    let yb = images_to_nchw(&[x_hat])?;

    let diff = &yb - &xb;
    let mut loss = 0.0;
    let mut grad_nchw = if want_grad {
        Some(Tensor::zeros(yb.raw_dim()))
    } else {
        None
    };
    let n0 = norm_of(&diff, false);
    if config.squared_norms {
        loss += config.pixel_weight * n0 * n0;
        if let Some(g) = grad_nchw.as_mut() {
            g.scaled_add(2.0 * config.pixel_weight as f32, &diff);
        }
    } else {
        loss += config.pixel_weight * n0;
        if let Some(g) = grad_nchw.as_mut() {
            if n0 > f64::EPSILON {
                g.scaled_add((config.pixel_weight / n0) as f32, &diff);
            }
        }
    }

    if !config.layers.is_empty() {
        let taps: Vec<usize> = config
            .layers
            .iter()
            .map(|t| resolve_tap(&phi.spec, &t.layer_id))
            .collect::<Result<_, _>>()?;
        let (_, x_taps) = phi.network.forward_taps(&xb, &taps)?;
        if want_grad {
            let (y_outs, caches) = phi.network.forward_eval_cached(&yb)?;
            let mut cotangents = Vec::new();
            for ((term, &tap), x_tap) in config.layers.iter().zip(&taps).zip(&x_taps) {
                let fdiff = &y_outs[tap] - x_tap;
                let n = norm_of(&fdiff, false);
                let factor = if config.squared_norms {
                    loss += term.weight * n * n;
                    2.0 * term.weight
                } else {
                    loss += term.weight * n;
                    if n <= f64::EPSILON {
                        continue;
                    }
                    term.weight / n
                };
                let mut ct = fdiff;
                ct.mapv_inplace(|v| v * factor as f32);
                cotangents.push((tap, ct));
            }
            if !cotangents.is_empty() {
                let gx = phi.network.backward_to_input(&caches, &cotangents)?;
                if let Some(g) = grad_nchw.as_mut() {
                    *g += &gx;
                }
            }
        } else {
            let (_, y_taps) = phi.network.forward_taps(&yb, &taps)?;
            for ((term, x_tap), y_tap) in config.layers.iter().zip(&x_taps).zip(&y_taps) {
                let n = norm_of(&(y_tap - x_tap), false);
                loss += term.weight * if config.squared_norms { n * n } else { n };
            }
        }
    }

    let grad = grad_nchw.map(|g| {
        let (h, w, c) = x.shape();
        let g = g.index_axis(Axis(0), 0).to_owned();
        Array3::from_shape_fn((h, w, c), |(i, j, ch)| g[[ch, i, j]])
    });
    Ok((loss, grad))
}

/// Inverse-magnitude re-balancing: weights become proportional to
/// `1 / magnitude` and the selection sums to one. A zero magnitude freezes
/// that layer's weight; the rest share the remaining budget.
pub fn normalize_layer_weights(
    previous: &[f64],
    magnitudes: &[f64],
) -> Result<Vec<f64>, ReconError> {
    if previous.len() != magnitudes.len() {
        return Err(ReconError::ConfigError(format!(
            "{} weights but {} magnitudes",
            previous.len(),
            magnitudes.len()
        )));
    }
    if magnitudes.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(ReconError::ConfigError(
            "magnitudes must be finite and non-negative".into(),
        ));
    }
    let frozen_sum: f64 = previous
        .iter()
        .zip(magnitudes)
        .filter(|(_, &m)| m == 0.0)
        .map(|(w, _)| *w)
        .sum();
    let inv_sum: f64 = magnitudes.iter().filter(|&&m| m > 0.0).map(|m| 1.0 / m).sum();
    if inv_sum == 0.0 {
        return Ok(previous.to_vec());
    }
    let budget = (1.0 - frozen_sum).max(0.0);
    Ok(previous
        .iter()
        .zip(magnitudes)
        .map(|(w, &m)| if m > 0.0 { budget / m / inv_sum } else { *w })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use invlab_core::Modality;
    use invlab_zoo::{desk_pool, extract_embeddings};
    use ndarray::Array3 as A3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn phi() -> ExtractorHandle {
        let spec = desk_pool(Modality::Face, 64, 5, 77).unwrap().remove(0);
        let network = spec.build().unwrap();
        ExtractorHandle {
            spec,
            network,
            checksum: "unregistered".into(),
        }
    }

    fn image(seed: u64, side: usize) -> ImageSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = A3::from_shape_fn((side, side, 3), |_| rng.gen_range(0.1f32..0.9));
        ImageSample::new(px, format!("s{seed}"), format!("x{seed}"), "raw").unwrap()
    }

    #[test]
    fn identical_images_cost_nothing() {
        let phi = phi();
        let x = image(1, 64);
        let cfg = LossConfig::uniform(1.0, &["conv1".into(), "emb".into()]);
        assert_eq!(reconstruction_loss(&x, &x, &phi, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn pixel_only_equals_the_plain_norm() {
        let phi = phi();
        let (x, y) = (image(2, 64), image(3, 64));
        let got = reconstruction_loss(&x, &y, &phi, &LossConfig::pixel_only(1.0)).unwrap();
        let by_hand: f64 = x
            .pixels
            .iter()
            .zip(y.pixels.iter())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((got - by_hand).abs() < 1e-9 * by_hand.max(1.0));
    }

    #[test]
    fn combined_loss_matches_independent_recomputation() {
        let phi = phi();
        let (x, y) = (image(4, 64), image(5, 64));
        let cfg = LossConfig {
            pixel_weight: 0.7,
            layers: vec![LayerTerm {
                layer_id: "emb".into(),
                weight: 0.3,
            }],
            squared_norms: false,
        };
        let got = reconstruction_loss(&x, &y, &phi, &cfg).unwrap();

        let pixel: f64 = x
            .pixels
            .iter()
            .zip(y.pixels.iter())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let ex = extract_embeddings(&phi, std::slice::from_ref(&x), "emb").unwrap();
        let ey = extract_embeddings(&phi, std::slice::from_ref(&y), "emb").unwrap();
        let feat: f64 = ex[0]
            .vector
            .iter()
            .zip(&ey[0].vector)
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let want = 0.7 * pixel + 0.3 * feat;
        assert!(
            (got - want).abs() < 1e-6 * want,
            "loss {got} vs recomputed {want}"
        );
    }

    #[test]
    fn squared_variant_squares_both_terms() {
        let phi = phi();
        let (x, y) = (image(6, 64), image(7, 64));
        let mut cfg = LossConfig::uniform(0.5, &["emb".to_string()]);
        let plain_pixel = reconstruction_loss(&x, &y, &phi, &LossConfig::pixel_only(1.0)).unwrap();
        let plain_feat = reconstruction_loss(
            &x,
            &y,
            &phi,
            &LossConfig {
                pixel_weight: 0.0,
                layers: cfg.layers.clone(),
                squared_norms: false,
            },
        )
        .unwrap();
        cfg.squared_norms = true;
        let got = reconstruction_loss(&x, &y, &phi, &cfg).unwrap();
        let want = 0.5 * plain_pixel * plain_pixel + plain_feat * plain_feat;
        assert!((got - want).abs() < 1e-6 * want);
    }

    #[test]
    fn missing_tap_is_refused() {
        let phi = phi();
        let cfg = LossConfig::uniform(1.0, &["nope".to_string()]);
        assert!(matches!(
            reconstruction_loss(&image(8, 64), &image(9, 64), &phi, &cfg),
            Err(ReconError::LayerError(_))
        ));
    }

    #[test]
    fn eligible_taps_walk_the_network_in_depth_order() {
        let phi = phi();
        assert_eq!(
            eligible_perceptual_layers(&phi.spec),
            vec!["conv1", "conv2", "conv3", "feat", "emb", "head"]
        );
    }

    #[test]
    fn weight_rebalancing_matches_inverse_magnitudes() {
        let w = normalize_layer_weights(&[0.5, 0.5], &[2.0, 2.0]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        let w = normalize_layer_weights(&[0.5, 0.5], &[1.0, 3.0]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12);
        assert!((w[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_magnitude_freezes_that_weight() {
        let w = normalize_layer_weights(&[0.4, 0.6], &[0.0, 2.0]).unwrap();
        assert_eq!(w[0], 0.4);
        assert!((w[1] - 0.6).abs() < 1e-12, "rest takes the leftover budget");
        let all_frozen = normalize_layer_weights(&[0.3, 0.7], &[0.0, 0.0]).unwrap();
        assert_eq!(all_frozen, vec![0.3, 0.7]);
    }

    #[test]
    fn pixel_gradient_matches_central_differences() {
        let phi = phi();
        let (x, y) = (image(10, 8), image(11, 8));
        let cfg = LossConfig::pixel_only(1.0);
        let (_, grad) = reconstruction_loss_grad(&x, &y, &phi, &cfg).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-2f32;
        for _ in 0..10 {
            let (i, j, c) = (
                rng.gen_range(0..8),
                rng.gen_range(0..8),
                rng.gen_range(0..3),
            );
            let mut plus = y.clone();
            plus.pixels[[i, j, c]] += h;
            let mut minus = y.clone();
            minus.pixels[[i, j, c]] -= h;
            let lp = reconstruction_loss(&x, &plus, &phi, &cfg).unwrap();
            let lm = reconstruction_loss(&x, &minus, &phi, &cfg).unwrap();
            let fd = (lp - lm) / (2.0 * h as f64);
            let an = grad[[i, j, c]] as f64;
            assert!(
                (fd - an).abs() <= 1e-3 * an.abs().max(1e-3),
                "coordinate ({i},{j},{c}): analytic {an} vs central {fd}"
            );
        }
    }

    #[test]
    fn feature_gradient_agrees_with_coarse_differences() {
        let phi = phi();
        let (x, y) = (image(14, 64), image(15, 64));
        let cfg = LossConfig {
            pixel_weight: 0.0,
            layers: vec![LayerTerm {
                layer_id: "emb".into(),
                weight: 1.0,
            }],
            squared_norms: false,
        };
        let (_, grad) = reconstruction_loss_grad(&x, &y, &phi, &cfg).unwrap();

        // Single-precision forward passes drown out tiny entries, so the
        // check targets the largest ones; a sign, scale, or pixel-layout
        // mistake would still miss at those coordinates.
        let mut coords: Vec<(usize, usize, usize)> = (0..64)
            .flat_map(|i| (0..64).flat_map(move |j| (0..3).map(move |c| (i, j, c))))
            .collect();
        coords.sort_by(|a, b| {
            let ga = grad[[a.0, a.1, a.2]].abs();
            let gb = grad[[b.0, b.1, b.2]].abs();
            gb.partial_cmp(&ga).unwrap()
        });
        let h = 1e-2f32;
        for &(i, j, c) in &coords[..5] {
            let mut plus = y.clone();
            plus.pixels[[i, j, c]] += h;
            let mut minus = y.clone();
            minus.pixels[[i, j, c]] -= h;
            let lp = reconstruction_loss(&x, &plus, &phi, &cfg).unwrap();
            let lm = reconstruction_loss(&x, &minus, &phi, &cfg).unwrap();
            let fd = (lp - lm) / (2.0 * h as f64);
            let an = grad[[i, j, c]] as f64;
            assert!(
                (fd - an).abs() <= 5e-2 * an.abs(),
                "coordinate ({i},{j},{c}): analytic {an} vs central {fd}"
            );
        }
    }
}
