//! Perceptual layer-subset selection: trains a short-budget decoder per
//! candidate loss and keeps the one whose reconstructions the extractor's
//! own identification head still recognizes most often.

use invlab_core::ImageSample;
use invlab_nn::{Network, Tensor};
use invlab_zoo::{EmbedderAt, ExtractorHandle};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::decoder::{images_to_nchw, ReconstructorHandle};
use crate::error::ReconError;
use crate::loss::{eligible_perceptual_layers, resolve_tap, LossConfig};
use crate::train::{pick_embed_layer, train_reconstructor, DecoderTrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsetSearchOutcome {
    pub chosen_index: usize,
    pub chosen: LossConfig,
    /// Per candidate, the fraction of validation reconstructions whose head
    /// prediction matches the prediction on the original image.
    pub classified_fractions: Vec<f64>,
    pub budget_epochs: usize,
}

/// Highest fraction wins; ties fall to the smaller subset, then to the
/// earlier candidate.
pub(crate) fn select_candidate(fractions: &[f64], sizes: &[usize]) -> usize {
    let mut best = 0;
    for i in 1..fractions.len() {
        if fractions[i] > fractions[best]
            || (fractions[i] == fractions[best] && sizes[i] < sizes[best])
        {
            best = i;
        }
    }
    best
}

fn head_predictions(network: &Network, xb: &Tensor) -> Result<Vec<usize>, ReconError> {
    let out = network.forward(xb)?;
    let n = out.shape()[0];
    let flat: usize = out.shape()[1..].iter().product();
    let rows = out
        .to_shape((n, flat))
        .map_err(|e| ReconError::ConfigError(e.to_string()))?
        .to_owned();
    Ok((0..n)
        .map(|i| {
            let row = rows.row(i);
            let mut arg = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = j;
                }
            }
            arg
        })
        .collect())
}

fn validate_candidates(
    phi: &ExtractorHandle,
    candidates: &[LossConfig],
) -> Result<(), ReconError> {
    if candidates.is_empty() {
        return Err(ReconError::ConfigError("no candidate losses given".into()));
    }
    let eligible = eligible_perceptual_layers(&phi.spec);
    for (i, cand) in candidates.iter().enumerate() {
        cand.validate()?;
        for term in &cand.layers {
            resolve_tap(&phi.spec, &term.layer_id)?;
        }
        let size = cand.layers.len();
        if eligible.len() >= 10 && !(5..=10).contains(&size) {
            return Err(ReconError::ConfigError(format!(
                "candidate {i} selects {size} layers; with {} eligible layers \
                 the subset size must lie in [5, 10]",
                eligible.len()
            )));
        }
    }
    Ok(())
}

/// Runs each candidate loss through a 10%-budget training pass on the same
/// decoder initialization, then picks the candidate by recognizability of
/// its reconstructions.
pub fn search_layer_subset(
    decoder: &ReconstructorHandle,
    phi: &ExtractorHandle,
    candidates: &[LossConfig],
    train_images: &[ImageSample],
    validation: &[ImageSample],
    cfg: &DecoderTrainConfig,
) -> Result<SubsetSearchOutcome, ReconError> {
    validate_candidates(phi, candidates)?;
    if validation.is_empty() {
        return Err(ReconError::ConfigError("validation set is empty".into()));
    }
    let budget_epochs = (cfg.epochs / 10).max(1);
    let mut short = cfg.clone();
    short.epochs = budget_epochs;

    let embed_layer = pick_embed_layer(phi, decoder.spec.input_length, &cfg.embed_layer)?;
    let embedder = EmbedderAt::new(phi.clone(), &embed_layer)?;
    let refs: Vec<&ImageSample> = validation.iter().collect();
    let val_x = images_to_nchw(&refs)?;
    let originals = head_predictions(&phi.network, &val_x)?;
    let emb_len = decoder.spec.input_length;
    let mut val_e = Array2::<f32>::zeros((validation.len(), emb_len));
    for (start, chunk) in refs.chunks(64).enumerate().map(|(i, c)| (i * 64, c)) {
        let xb = images_to_nchw(chunk)?;
        for (row, vec) in embedder.embed_nchw(&xb)?.into_iter().enumerate() {
            val_e
                .row_mut(start + row)
                .assign(&ndarray::Array1::from_vec(vec));
        }
    }
    let val_e = val_e.into_dyn();

    let mut fractions = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let (trained, _) = train_reconstructor(decoder, phi, train_images, cand, &short)?;
        let mut recon = trained.network.forward(&val_e)?;
        recon.mapv_inplace(|v| v.clamp(0.0, 1.0));
        let predicted = head_predictions(&phi.network, &recon)?;
        let agree = originals
            .iter()
            .zip(&predicted)
            .filter(|(a, b)| a == b)
            .count();
        fractions.push(agree as f64 / validation.len() as f64);
    }

    let sizes: Vec<usize> = candidates.iter().map(|c| c.layers.len()).collect();
    let chosen_index = select_candidate(&fractions, &sizes);
    Ok(SubsetSearchOutcome {
        chosen_index,
        chosen: candidates[chosen_index].clone(),
        classified_fractions: fractions,
        budget_epochs,
    })
}
