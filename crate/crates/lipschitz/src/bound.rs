//! Per-layer Lipschitz bounds and their product over a whole network.
//!
//! Linear layers get their spectral norms (power iteration for dense,
//! Fourier analysis for convolutions), rectifier-family activations and
//! shape moves count as 1, and contractive layers are recorded with their
//! actual bound but enter the product as 1.

use invlab_nn::{ActKind, Layer, Network};
use ndarray::{Ix2, Ix4};
use serde::{Deserialize, Serialize};

use crate::error::LipschitzError;
use crate::spectral::{conv_singular_values, dense_spectral_norm, transpose_conv_lipschitz};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv,
    TransposeConv,
    Activation,
    Normalization,
    Pooling,
    Reshape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Svd,
    DftConv,
    Unit,
    Contractive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBound {
    pub layer_id: String,
    pub kind: LayerKind,
    pub bound: f64,
    pub method: MethodTag,
    /// Whether the bound enters the product; contractive layers do not
    /// (they are treated as 1).
    pub counted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkBound {
    pub layers: Vec<LayerBound>,
    /// Product of the counted per-layer bounds.
    pub product: f64,
    /// Caveats about how the bound was derived.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BoundOptions {
    /// Treat normalization as contractive (bound recorded, product factor 1)
    /// instead of including its exact per-channel scale.
    pub conservative_normalization: bool,
}

fn spatial(shape: &[usize]) -> Result<(usize, usize), LipschitzError> {
    match shape {
        [_, _, h, w] => Ok((*h, *w)),
        other => Err(LipschitzError::ShapeError(format!(
            "expected a batched channel-height-width shape, got {other:?}"
        ))),
    }
}

/// Certified upper bound on the Lipschitz constant of `network` with
/// respect to flattened Euclidean norms, for per-sample inputs of
/// `input_shape` (no batch axis).
pub fn network_lipschitz_bound(
    network: &Network,
    input_shape: &[usize],
    options: &BoundOptions,
) -> Result<NetworkBound, LipschitzError> {
    let mut shape: Vec<usize> = std::iter::once(1)
        .chain(input_shape.iter().copied())
        .collect();
    let mut layers = Vec::with_capacity(network.len());
    for (idx, layer) in network.layers().iter().enumerate() {
        let (kind, bound, method, counted) = match layer {
            Layer::Dense { w, .. } => {
                let w2 = w
                    .view()
                    .into_dimensionality::<Ix2>()
                    .map_err(|e| LipschitzError::ShapeError(e.to_string()))?;
                (LayerKind::Dense, dense_spectral_norm(&w2)?, MethodTag::Svd, true)
            }
            Layer::Conv2d { w, .. } => {
                // Stride only subsamples the stride-1 operator's rows, so
                // the circular stride-1 spectrum stays an upper bound.
                let hw = spatial(&shape)?;
                let w4 = w
                    .view()
                    .into_dimensionality::<Ix4>()
                    .map_err(|e| LipschitzError::ShapeError(e.to_string()))?;
                let top = conv_singular_values(&w4, hw)?[0];
                (LayerKind::Conv, top, MethodTag::DftConv, true)
            }
            Layer::TransposeConv2d { w, stride, .. } => {
                let hw = spatial(&shape)?;
                let w4 = w
                    .view()
                    .into_dimensionality::<Ix4>()
                    .map_err(|e| LipschitzError::ShapeError(e.to_string()))?;
                let top = transpose_conv_lipschitz(&w4, *stride, hw)?;
                (LayerKind::TransposeConv, top, MethodTag::DftConv, true)
            }
            Layer::BatchNorm {
                gamma,
                running_var,
                eps,
                ..
            } => {
                // At inference the layer is the per-channel affine map
                // x -> gamma * (x - mean)/sqrt(var + eps) + beta, whose
                // norm is the largest per-channel scale.
                let exact = gamma
                    .iter()
                    .zip(running_var.iter())
                    .map(|(&g, &v)| (g.abs() as f64) / ((v as f64) + *eps as f64).sqrt())
                    .fold(0.0f64, f64::max);
                if options.conservative_normalization {
                    (LayerKind::Normalization, exact, MethodTag::Contractive, false)
                } else {
                    (LayerKind::Normalization, exact, MethodTag::Svd, true)
                }
            }
            Layer::Act(kind) => {
                let slope = match kind {
                    ActKind::Relu | ActKind::Tanh => 1.0,
                    ActKind::LeakyRelu { alpha } | ActKind::Elu { alpha } => {
                        (alpha.abs() as f64).max(1.0)
                    }
                };
                (LayerKind::Activation, slope, MethodTag::Unit, true)
            }
            Layer::PRelu { alpha } => {
                let worst = alpha
                    .iter()
                    .map(|a| a.abs() as f64)
                    .fold(1.0f64, f64::max);
                (LayerKind::Activation, worst, MethodTag::Unit, true)
            }
            Layer::MaxPool2d { kernel, stride } => {
                if kernel <= stride {
                    // Disjoint windows: selection is non-expansive.
                    (LayerKind::Pooling, 1.0, MethodTag::Contractive, false)
                } else {
                    // Overlapping windows replicate inputs: each one feeds
                    // at most ceil(k/s)^2 windows, so squared displacement
                    // grows by that factor and the norm by its square root.
                    let per_axis = kernel.div_ceil(*stride) as f64;
                    (LayerKind::Pooling, per_axis, MethodTag::Unit, true)
                }
            }
            Layer::GlobalAvgPool => {
                let (h, w) = spatial(&shape)?;
                let exact = 1.0 / ((h * w) as f64).sqrt();
                (LayerKind::Pooling, exact, MethodTag::Contractive, false)
            }
            Layer::Flatten | Layer::Reshape { .. } => {
                (LayerKind::Reshape, 1.0, MethodTag::Unit, true)
            }
        };
        layers.push(LayerBound {
            layer_id: format!("{idx:02}-{}", layer.name()),
            kind,
            bound,
            method,
            counted,
        });
        shape = layer.infer_output_shape(&shape)?;
    }
    let product = layers
        .iter()
        .map(|l| if l.counted { l.bound } else { 1.0 })
        .product();
    let mut notes = Vec::new();
    if layers.iter().any(|l| l.method == MethodTag::DftConv) {
        notes.push(
            "convolution spectra assume circular boundaries while the layers \
             zero-pad; empirical verification covers the gap"
                .to_string(),
        );
    }
    Ok(NetworkBound {
        layers,
        product,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use invlab_nn::Tensor;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(m: Array2<f32>) -> Layer {
        let out = m.nrows();
        Layer::Dense {
            w: m.into_dyn(),
            b: Tensor::zeros(vec![out]),
        }
    }

    fn scaled_identity(n: usize, c: f32) -> Array2<f32> {
        Array2::eye(n) * c
    }

    #[test]
    fn identity_network_has_unit_bound() {
        let net = Network::new(vec![dense(scaled_identity(5, 1.0))]);
        let nb = network_lipschitz_bound(&net, &[5], &BoundOptions::default()).unwrap();
        assert!((nb.product - 1.0).abs() < 1e-9, "got {}", nb.product);
        assert_eq!(nb.layers.len(), 1);
        assert_eq!(nb.layers[0].kind, LayerKind::Dense);
        assert_eq!(nb.layers[0].method, MethodTag::Svd);
    }

    #[test]
    fn diagonal_chain_multiplies_out() {
        let net = Network::new(vec![
            dense(scaled_identity(4, 2.0)),
            Layer::relu(),
            dense(scaled_identity(4, 3.0)),
        ]);
        let nb = network_lipschitz_bound(&net, &[4], &BoundOptions::default()).unwrap();
        assert!((nb.product - 6.0).abs() < 1e-9, "got {}", nb.product);
        assert_eq!(nb.layers[1].kind, LayerKind::Activation);
        assert!((nb.layers[1].bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_exact_by_default_and_contractive_on_request() {
        let mut bn = Layer::batch_norm(2);
        if let Layer::BatchNorm { gamma, .. } = &mut bn {
            gamma[[0]] = 2.0;
        }
        let net = Network::new(vec![bn]);
        let exact = network_lipschitz_bound(&net, &[2], &BoundOptions::default()).unwrap();
        let want = 2.0 / (1.0f64 + 1e-5).sqrt();
        assert!(
            (exact.layers[0].bound - want).abs() < 1e-6,
            "exact bound {}",
            exact.layers[0].bound
        );
        assert!(exact.layers[0].counted);
        assert!((exact.product - want).abs() < 1e-6);

        let opts = BoundOptions {
            conservative_normalization: true,
        };
        let paper = network_lipschitz_bound(&net, &[2], &opts).unwrap();
        assert_eq!(paper.layers[0].method, MethodTag::Contractive);
        assert!(!paper.layers[0].counted);
        assert!(
            (paper.layers[0].bound - want).abs() < 1e-6,
            "the actual scale is still recorded"
        );
        assert!((paper.product - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_linear_weights_scales_the_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(431);
        let w1 = Array2::from_shape_fn((16, 8), |_| rng.gen_range(-1.0f32..1.0));
        let tconv = Layer::tconv2d(1, 2, 3, 2, 1, 1, &mut rng);
        let mut net = Network::new(vec![
            dense(w1),
            Layer::leaky_relu(0.2),
            Layer::Reshape {
                shape: vec![1, 4, 4],
            },
            tconv,
            Layer::batch_norm(2),
        ]);
        let before = network_lipschitz_bound(&net, &[8], &BoundOptions::default()).unwrap();
        for layer in net.layers_mut() {
            match layer {
                Layer::Dense { w, .. } | Layer::TransposeConv2d { w, .. } => *w *= 2.0,
                _ => {}
            }
        }
        let after = network_lipschitz_bound(&net, &[8], &BoundOptions::default()).unwrap();
        for (a, b) in before.layers.iter().zip(&after.layers) {
            let factor = match a.kind {
                LayerKind::Dense | LayerKind::TransposeConv => 2.0,
                _ => 1.0,
            };
            assert!(
                (b.bound - factor * a.bound).abs() <= 1e-9 * a.bound.max(1e-12),
                "{}: {} vs {}",
                a.layer_id,
                a.bound,
                b.bound
            );
        }
        assert!(
            (after.product - 4.0 * before.product).abs() <= 1e-9 * before.product,
            "two scaled layers must scale the product by 4: {} vs {}",
            before.product,
            after.product
        );
    }

    #[test]
    fn contractive_pooling_is_recorded_but_not_counted() {
        let net = Network::new(vec![
            Layer::MaxPool2d {
                kernel: 2,
                stride: 2,
            },
            Layer::GlobalAvgPool,
        ]);
        let nb = network_lipschitz_bound(&net, &[3, 8, 8], &BoundOptions::default()).unwrap();
        assert!((nb.product - 1.0).abs() < 1e-12);
        assert_eq!(nb.layers[0].bound, 1.0);
        assert!(!nb.layers[0].counted);
        // After 2x2 pooling the map averages over a 4x4 grid.
        assert!((nb.layers[1].bound - 0.25).abs() < 1e-12);
        assert_eq!(nb.layers[1].method, MethodTag::Contractive);
    }
}
