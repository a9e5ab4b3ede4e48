//! Extractor model descriptions: a serializable architecture, named blocks
//! for fine-tuning schedules, and the layers at which embeddings may be
//! extracted.

use invlab_core::Modality;
use invlab_nn::{infer_spec_shapes, LayerSpec, Network};
use serde::{Deserialize, Serialize};

use crate::error::ZooError;

/// One layer the registry exposes for embedding extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionLayer {
    pub layer_id: String,
    /// Index into the architecture's layer list; the embedding is that
    /// layer's output, flattened per sample.
    pub layer_index: usize,
    pub length: usize,
}

/// Named group of layer indices, the unit opened by fine-tuning schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchBlock {
    pub block_id: String,
    pub layers: Vec<usize>,
}

/// Full description of a feature extractor: architecture, provenance, and
/// extraction points. Weights live separately in the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub model_id: String,
    pub modality: Modality,
    /// Square input side length.
    pub input_size: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub blocks: Vec<ArchBlock>,
    pub extraction: Vec<ExtractionLayer>,
    /// Identity classes of the pretraining head.
    pub num_classes: usize,
    /// Lineage marker: "scratch" or the model_id this was fine-tuned from.
    pub pretraining_tag: String,
    /// Weight initialization seed.
    pub seed: u64,
}

impl ExtractorSpec {
    pub fn validate(&self) -> Result<(), ZooError> {
        if self.model_id.is_empty()
            || !self
                .model_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        {
            return Err(ZooError::ConfigError(format!(
                "model id '{}' is empty or not filesystem-safe",
                self.model_id
            )));
        }
        if self.input_size == 0 || self.input_channels == 0 {
            return Err(ZooError::ConfigError("degenerate input shape".into()));
        }
        if self.num_classes < 2 {
            return Err(ZooError::ConfigError("need at least two classes".into()));
        }
        let shapes = infer_spec_shapes(
            &self.layers,
            &[1, self.input_channels, self.input_size, self.input_size],
        )?;
        let final_shape = shapes.last().expect("non-empty layer list");
        if final_shape != &[1, self.num_classes] {
            return Err(ZooError::ConfigError(format!(
                "head produces shape {final_shape:?}, expected [1, {}]",
                self.num_classes
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for ex in &self.extraction {
            if !seen.insert(&ex.layer_id) {
                return Err(ZooError::ConfigError(format!(
                    "duplicate extraction layer id '{}'",
                    ex.layer_id
                )));
            }
            let shape = shapes.get(ex.layer_index).ok_or_else(|| {
                ZooError::ConfigError(format!(
                    "extraction layer '{}' points past the architecture",
                    ex.layer_id
                ))
            })?;
            let flat: usize = shape[1..].iter().product();
            if flat != ex.length {
                return Err(ZooError::ConfigError(format!(
                    "extraction layer '{}' declares length {}, architecture computes {}",
                    ex.layer_id, ex.length, flat
                )));
            }
        }
        for block in &self.blocks {
            if block.layers.is_empty() {
                return Err(ZooError::ConfigError(format!(
                    "block '{}' opens no layers",
                    block.block_id
                )));
            }
            if let Some(&bad) = block.layers.iter().find(|&&i| i >= self.layers.len()) {
                return Err(ZooError::ConfigError(format!(
                    "block '{}' references layer {bad} outside the architecture",
                    block.block_id
                )));
            }
        }
        Ok(())
    }

    pub fn extraction_layer(&self, layer_id: &str) -> Result<&ExtractionLayer, ZooError> {
        self.extraction
            .iter()
            .find(|e| e.layer_id == layer_id)
            .ok_or_else(|| {
                ZooError::LayerError(format!(
                    "'{layer_id}' not among extraction layers of '{}': {:?}",
                    self.model_id,
                    self.extraction
                        .iter()
                        .map(|e| e.layer_id.as_str())
                        .collect::<Vec<_>>()
                ))
            })
    }

    pub fn block(&self, block_id: &str) -> Result<&ArchBlock, ZooError> {
        self.blocks
            .iter()
            .find(|b| b.block_id == block_id)
            .ok_or_else(|| {
                ZooError::ConfigError(format!(
                    "block '{block_id}' not declared by '{}'",
                    self.model_id
                ))
            })
    }

    /// Materializes a freshly initialized network from the spec seed.
    pub fn build(&self) -> Result<Network, ZooError> {
        self.validate()?;
        Ok(invlab_nn::build_network(&self.layers, self.seed)?)
    }
}

/// Activation families used across the desk-scale pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActChoice {
    Relu,
    LeakyRelu,
    Elu,
    Tanh,
    PRelu,
}

impl ActChoice {
    fn to_spec(self) -> LayerSpec {
        match self {
            ActChoice::Relu => LayerSpec::relu(),
            ActChoice::LeakyRelu => LayerSpec::leaky_relu(0.2),
            ActChoice::Elu => LayerSpec::elu(1.0),
            ActChoice::Tanh => LayerSpec::tanh(),
            ActChoice::PRelu => LayerSpec::PRelu,
        }
    }

    /// Rectifier vs saturating, the coarse attribute predicted in phase 1.
    pub fn family(self) -> &'static str {
        match self {
            ActChoice::Tanh => "tanh",
            _ => "rectifier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Downsample {
    MaxPool,
    StridedConv,
}

/// Architecture axes for the small CNN family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnKnobs {
    pub kernel: usize,
    pub activation: ActChoice,
    pub downsample: Downsample,
    /// Number of conv blocks; each halves the spatial side.
    pub conv_blocks: usize,
    pub base_channels: usize,
    pub batch_norm: bool,
    pub embedding_len: usize,
}

/// Builds a small CNN classifier spec: conv blocks that halve the spatial
/// side, then flatten, an embedding-width dense layer, and a class head.
/// Extraction layers: `feat` (flattened conv features) and `emb` (activated
/// embedding layer).
pub fn cnn_spec(
    model_id: impl Into<String>,
    modality: Modality,
    input_size: usize,
    knobs: CnnKnobs,
    num_classes: usize,
    seed: u64,
) -> Result<ExtractorSpec, ZooError> {
    if input_size % (1 << knobs.conv_blocks) != 0 {
        return Err(ZooError::ConfigError(format!(
            "input {input_size} not divisible by 2^{}",
            knobs.conv_blocks
        )));
    }
    let mut layers = Vec::new();
    let mut blocks = Vec::new();
    let mut in_c = 3usize;
    let mut side = input_size;
    for b in 0..knobs.conv_blocks {
        let out_c = (knobs.base_channels << b).min(64);
        let start = layers.len();
        match knobs.downsample {
            Downsample::StridedConv => {
                layers.push(LayerSpec::Conv2d {
                    in_channels: in_c,
                    out_channels: out_c,
                    kernel: knobs.kernel,
                    stride: 2,
                    pad: knobs.kernel / 2,
                });
            }
            Downsample::MaxPool => {
                layers.push(LayerSpec::Conv2d {
                    in_channels: in_c,
                    out_channels: out_c,
                    kernel: knobs.kernel,
                    stride: 1,
                    pad: knobs.kernel / 2,
                });
            }
        }
        if knobs.batch_norm {
            layers.push(LayerSpec::BatchNorm { features: out_c });
        }
        layers.push(knobs.activation.to_spec());
        if knobs.downsample == Downsample::MaxPool {
            layers.push(LayerSpec::MaxPool2d { kernel: 2, stride: 2 });
        }
        blocks.push(ArchBlock {
            block_id: format!("conv{}", b + 1),
            layers: (start..layers.len()).collect(),
        });
        in_c = out_c;
        side /= 2;
    }
    let flat = in_c * side * side;
    let feat_index = layers.len();
    layers.push(LayerSpec::Flatten);
    let head_start = layers.len();
    layers.push(LayerSpec::Dense {
        in_features: flat,
        out_features: knobs.embedding_len,
    });
    layers.push(knobs.activation.to_spec());
    let emb_index = layers.len() - 1;
    layers.push(LayerSpec::Dense {
        in_features: knobs.embedding_len,
        out_features: num_classes,
    });
    blocks.push(ArchBlock {
        block_id: "head".into(),
        layers: (head_start..layers.len()).collect(),
    });

    let spec = ExtractorSpec {
        model_id: model_id.into(),
        modality,
        input_size,
        input_channels: 3,
        layers,
        blocks,
        extraction: vec![
            ExtractionLayer {
                layer_id: "feat".into(),
                layer_index: feat_index,
                length: flat,
            },
            ExtractionLayer {
                layer_id: "emb".into(),
                layer_index: emb_index,
                length: knobs.embedding_len,
            },
        ],
        num_classes,
        pretraining_tag: "scratch".into(),
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Four architectures spanning the pool axes: kernel size, activation,
/// pooling style, depth, and normalization.
pub fn desk_pool(
    modality: Modality,
    input_size: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<ExtractorSpec>, ZooError> {
    let variants = [
        (
            "cnn-k3-max-relu",
            CnnKnobs {
                kernel: 3,
                activation: ActChoice::Relu,
                downsample: Downsample::MaxPool,
                conv_blocks: 3,
                base_channels: 8,
                batch_norm: true,
                embedding_len: 128,
            },
        ),
        (
            "cnn-k5-strided-prelu",
            CnnKnobs {
                kernel: 5,
                activation: ActChoice::PRelu,
                downsample: Downsample::StridedConv,
                conv_blocks: 3,
                base_channels: 8,
                batch_norm: false,
                embedding_len: 128,
            },
        ),
        (
            "cnn-k3-deep-elu",
            CnnKnobs {
                kernel: 3,
                activation: ActChoice::Elu,
                downsample: Downsample::MaxPool,
                conv_blocks: 4,
                base_channels: 6,
                batch_norm: true,
                embedding_len: 128,
            },
        ),
        (
            "cnn-k7-strided-tanh",
            CnnKnobs {
                kernel: 7,
                activation: ActChoice::Tanh,
                downsample: Downsample::StridedConv,
                conv_blocks: 2,
                base_channels: 6,
                batch_norm: false,
                embedding_len: 128,
            },
        ),
    ];
    variants
        .iter()
        .enumerate()
        .map(|(i, (id, knobs))| {
            cnn_spec(
                *id,
                modality,
                input_size,
                *knobs,
                num_classes,
                seed.wrapping_add(i as u64),
            )
        })
        .collect()
}

/// Architecture attribute labels for one spec, used as categorical targets
/// by attribute prediction.
pub type AttributeLabels = Vec<(String, String)>;

/// Builds `count` specs that vary systematically along the attribute axes,
/// half rectifier-activated and half tanh-activated, each paired with its
/// attribute labels.
pub fn varied_fleet(
    count: usize,
    modality: Modality,
    input_size: usize,
    num_classes: usize,
    embedding_len: usize,
    seed: u64,
) -> Result<Vec<(ExtractorSpec, AttributeLabels)>, ZooError> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let activation = if i % 2 == 0 {
            // Cycle the rectifier family so "rectifier" is not one fixed op.
            match (i / 2) % 3 {
                0 => ActChoice::Relu,
                1 => ActChoice::LeakyRelu,
                _ => ActChoice::Elu,
            }
        } else {
            ActChoice::Tanh
        };
        let kernel = if (i / 2) % 2 == 0 { 3 } else { 5 };
        let downsample = if (i / 4) % 2 == 0 {
            Downsample::MaxPool
        } else {
            Downsample::StridedConv
        };
        let conv_blocks = if (i / 8) % 2 == 0 { 3 } else { 2 };
        let knobs = CnnKnobs {
            kernel,
            activation,
            downsample,
            conv_blocks,
            base_channels: 6,
            batch_norm: i % 4 < 2,
            embedding_len,
        };
        let spec = cnn_spec(
            format!("fleet-{i:02}"),
            modality,
            input_size,
            knobs,
            num_classes,
            seed.wrapping_add(1000 + i as u64),
        )?;
        let labels: AttributeLabels = vec![
            ("activation".into(), activation.family().to_string()),
            ("kernel".into(), kernel.to_string()),
            (
                "pooling".into(),
                match downsample {
                    Downsample::MaxPool => "max".to_string(),
                    Downsample::StridedConv => "strided".to_string(),
                },
            ),
            ("depth".into(), conv_blocks.to_string()),
        ];
        out.push((spec, labels));
    }
    Ok(out)
}
