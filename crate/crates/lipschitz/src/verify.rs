//! Empirical falsification of certified bounds.
//!
//! Random probe pairs (base point plus perturbation at several relative
//! scales) are pushed through the network and the displacement ratio
//! `|f(x + d) - f(x)| / |d|` is compared against the bound. A sound bound
//! never loses to this test; the reported tightness says how close the
//! probes came.

use invlab_nn::Network;
use ndarray::{ArrayD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::LipschitzError;
use crate::mirror::forward_f64;

/// Probe pairs per forward pass; keeps memory bounded for wide decoders.
const PAIR_CHUNK: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub probes: usize,
    pub seed: u64,
    /// Perturbation sizes relative to the base point's norm; probes cycle
    /// through these so both local and large displacements get sampled.
    pub scales: Vec<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            probes: 1000,
            seed: 0,
            scales: vec![1e-3, 1e-2, 1e-1, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub bound: f64,
    pub probes: usize,
    /// Probes whose perturbation degenerated to zero and were not scored.
    pub skipped: usize,
    pub max_ratio: f64,
    pub violations: usize,
    /// `max_ratio / bound`; 1.0 means some probe attained the bound.
    pub tightness: f64,
    pub scales: Vec<f64>,
}

/// Probes `network` with random input pairs and counts displacement ratios
/// exceeding `bound`. `input_shape` is per sample, without the batch axis.
pub fn verify_bound(
    network: &Network,
    input_shape: &[usize],
    bound: f64,
    options: &VerifyOptions,
) -> Result<VerifyReport, LipschitzError> {
    if options.probes == 0 {
        return Err(LipschitzError::ConfigError(
            "at least one probe is required".into(),
        ));
    }
    if options.scales.is_empty() {
        return Err(LipschitzError::ConfigError(
            "at least one perturbation scale is required".into(),
        ));
    }
    if options.scales.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(LipschitzError::ConfigError(
            "perturbation scales must be finite and positive".into(),
        ));
    }
    if !bound.is_finite() || bound < 0.0 {
        return Err(LipschitzError::ConfigError(format!(
            "cannot verify a bound of {bound}"
        )));
    }
    let n: usize = input_shape.iter().product();
    if n == 0 {
        return Err(LipschitzError::ShapeError(
            "input shape has zero elements".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let normal = StandardNormal;
    // Probes are evaluated in f64 (see the mirror module), so evaluation
    // noise sits far below this slack; it only guards against rounding in
    // the bound computation itself.
    let limit = bound * (1.0 + 1e-6) + 1e-12;

    let mut max_ratio = 0.0f64;
    let mut violations = 0usize;
    let mut skipped = 0usize;
    let mut done = 0usize;
    while done < options.probes {
        let chunk = PAIR_CHUNK.min(options.probes - done);
        let mut batch_shape = vec![2 * chunk];
        batch_shape.extend_from_slice(input_shape);
        let mut batch = ArrayD::<f64>::zeros(batch_shape);
        let mut delta_norms = vec![0.0f64; chunk];
        for pair in 0..chunk {
            let x: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let dir: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let x_norm = norm(&x);
            let dir_norm = norm(&dir);
            if x_norm == 0.0 || dir_norm == 0.0 {
                skipped += 1;
                continue;
            }
            let scale = options.scales[(done + pair) % options.scales.len()];
            let magnitude = scale * x_norm / dir_norm;
            let delta: Vec<f64> = dir.iter().map(|&d| d * magnitude).collect();
            let delta_norm = norm(&delta);
            if delta_norm == 0.0 {
                skipped += 1;
                continue;
            }
            delta_norms[pair] = delta_norm;
            let mut base = batch.index_axis_mut(Axis(0), pair);
            for (slot, &v) in base.iter_mut().zip(&x) {
                *slot = v;
            }
            let mut moved = batch.index_axis_mut(Axis(0), chunk + pair);
            for ((slot, &v), &d) in moved.iter_mut().zip(&x).zip(&delta) {
                *slot = v + d;
            }
        }
        let out = forward_f64(network, batch)?;
        for pair in 0..chunk {
            if delta_norms[pair] == 0.0 {
                continue;
            }
            let a = out.index_axis(Axis(0), pair);
            let b = out.index_axis(Axis(0), chunk + pair);
            let diff_sq: f64 = a
                .iter()
                .zip(b.iter())
                .map(|(&p, &q)| {
                    let d = p - q;
                    d * d
                })
                .sum();
            let ratio = diff_sq.sqrt() / delta_norms[pair];
            if ratio > max_ratio {
                max_ratio = ratio;
            }
            if ratio > limit {
                violations += 1;
            }
        }
        done += chunk;
    }
    let tightness = if bound == 0.0 {
        if max_ratio == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        max_ratio / bound
    };
    Ok(VerifyReport {
        bound,
        probes: options.probes,
        skipped,
        max_ratio,
        violations,
        tightness,
        scales: options.scales.clone(),
    })
}

fn norm(values: &[f64]) -> f64 {
    values.iter().map(|&v| v * v).sum::<f64>().sqrt()
}
