//! Serializable architecture descriptors. A network is an ordered list of
//! layer specs; building one materializes weights deterministically from a
//! seed, so a persisted spec plus a seed reproduces the same initial model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::layer::{ActKind, Layer};
use crate::network::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    TransposeConv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    },
    BatchNorm {
        features: usize,
    },
    Activation {
        kind: ActKind,
    },
    PRelu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn relu() -> Self {
        LayerSpec::Activation { kind: ActKind::Relu }
    }

    pub fn leaky_relu(alpha: f32) -> Self {
        LayerSpec::Activation {
            kind: ActKind::LeakyRelu { alpha },
        }
    }

    pub fn elu(alpha: f32) -> Self {
        LayerSpec::Activation {
            kind: ActKind::Elu { alpha },
        }
    }

    pub fn tanh() -> Self {
        LayerSpec::Activation { kind: ActKind::Tanh }
    }

    fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: String| Err(NnError::ConfigError(msg));
        match self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if *in_features == 0 || *out_features == 0 {
                    return bad(format!("dense {in_features}x{out_features} has a zero side"));
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            }
            | LayerSpec::TransposeConv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if *in_channels == 0 || *out_channels == 0 || *kernel == 0 || *stride == 0 {
                    return bad("conv layer with zero channels, kernel, or stride".into());
                }
            }
            LayerSpec::BatchNorm { features } => {
                if *features == 0 {
                    return bad("batch norm over zero features".into());
                }
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                if *kernel == 0 || *stride == 0 {
                    return bad("pooling with zero kernel or stride".into());
                }
            }
            LayerSpec::Reshape { shape } => {
                if shape.is_empty() || shape.contains(&0) {
                    return bad(format!("reshape target {shape:?} is degenerate"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Whether the first activation at or after `idx` saturates (tanh), which
/// decides between fan-in rectifier init and symmetric init.
fn feeds_tanh(specs: &[LayerSpec], idx: usize) -> bool {
    for spec in &specs[idx..] {
        match spec {
            LayerSpec::Activation { kind: ActKind::Tanh } => return true,
            LayerSpec::Activation { .. } | LayerSpec::PRelu => return false,
            LayerSpec::BatchNorm { .. } => continue,
            _ => return false,
        }
    }
    false
}

/// Materializes a network from specs with seed-deterministic weights.
pub fn build_network(specs: &[LayerSpec], seed: u64) -> Result<Network, NnError> {
    if specs.is_empty() {
        return Err(NnError::ConfigError("empty layer spec list".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let layer = match spec {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if feeds_tanh(specs, i + 1) {
                    Layer::Dense {
                        w: crate::init::glorot_uniform(
                            &[*out_features, *in_features],
                            *in_features,
                            *out_features,
                            &mut rng,
                        ),
                        b: crate::init::zeros(&[*out_features]),
                    }
                } else {
                    Layer::dense(*in_features, *out_features, &mut rng)
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                if feeds_tanh(specs, i + 1) {
                    let fan_in = in_channels * kernel * kernel;
                    let fan_out = out_channels * kernel * kernel;
                    Layer::Conv2d {
                        w: crate::init::glorot_uniform(
                            &[*out_channels, *in_channels, *kernel, *kernel],
                            fan_in,
                            fan_out,
                            &mut rng,
                        ),
                        b: crate::init::zeros(&[*out_channels]),
                        stride: *stride,
                        pad: *pad,
                    }
                } else {
                    Layer::conv2d(*in_channels, *out_channels, *kernel, *stride, *pad, &mut rng)
                }
            }
            LayerSpec::TransposeConv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
                out_pad,
            } => Layer::tconv2d(
                *in_channels,
                *out_channels,
                *kernel,
                *stride,
                *pad,
                *out_pad,
                &mut rng,
            ),
            LayerSpec::BatchNorm { features } => Layer::batch_norm(*features),
            LayerSpec::Activation { kind } => Layer::Act(*kind),
            LayerSpec::PRelu => Layer::prelu(0.25),
            LayerSpec::MaxPool2d { kernel, stride } => Layer::MaxPool2d {
                kernel: *kernel,
                stride: *stride,
            },
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Reshape { shape } => Layer::Reshape {
                shape: shape.clone(),
            },
        };
        layers.push(layer);
    }
    Ok(Network::new(layers))
}

/// Output shape after every spec for a given input shape, without building
/// any weights.
pub fn infer_spec_shapes(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>, NnError> {
    // Building with a fixed seed is cheap relative to training and reuses the
    // layer shape rules directly.
    build_network(specs, 0)?.infer_layer_shapes(input)
}
