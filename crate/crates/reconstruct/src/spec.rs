//! Decoder architectures: an initial dense layer sized to the embedding,
//! a reshape onto a coarse grid, and a ladder of stride-2 transpose
//! convolutions up to the fixed 64x64x3 output.

use invlab_nn::{infer_spec_shapes, LayerSpec};
use serde::{Deserialize, Serialize};

use crate::error::ReconError;

/// Embedding lengths the decoder family accepts.
pub const SUPPORTED_LENGTHS: [usize; 4] = [128, 512, 1024, 2048];

/// Output side length; every decoder ends at 64x64x3.
pub const OUTPUT_SIDE: usize = 64;

const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructorSpec {
    pub decoder_id: String,
    pub input_length: usize,
    pub layers: Vec<LayerSpec>,
}

impl ReconstructorSpec {
    pub fn validate(&self) -> Result<(), ReconError> {
        if !SUPPORTED_LENGTHS.contains(&self.input_length) {
            return Err(ReconError::SpecError(format!(
                "input length {} unsupported, expected one of {SUPPORTED_LENGTHS:?}",
                self.input_length
            )));
        }
        if self.decoder_id.is_empty() {
            return Err(ReconError::SpecError("empty decoder id".into()));
        }
        match self.layers.first() {
            Some(LayerSpec::Dense { in_features, .. }) if *in_features == self.input_length => {}
            _ => {
                return Err(ReconError::SpecError(format!(
                    "decoder must open with a dense layer taking {} inputs",
                    self.input_length
                )))
            }
        }
        let shapes = infer_spec_shapes(&self.layers, &[1, self.input_length])?;
        let last = shapes.last().expect("non-empty layer list");
        if last != &[1, 3, OUTPUT_SIDE, OUTPUT_SIDE] {
            return Err(ReconError::SpecError(format!(
                "decoder produces {last:?}, expected [1, 3, {OUTPUT_SIDE}, {OUTPUT_SIDE}]"
            )));
        }
        Ok(())
    }
}

/// Dense + reshape head, then one transpose-conv block per remaining channel
/// count. Every block doubles the side; all but the last get normalization
/// and a leaky rectifier, the output layer stays linear.
fn decoder_layers(input_length: usize, start_side: usize, channels: &[usize]) -> Vec<LayerSpec> {
    let mut layers = vec![
        LayerSpec::Dense {
            in_features: input_length,
            out_features: start_side * start_side * channels[0],
        },
        LayerSpec::leaky_relu(LEAKY_SLOPE),
        LayerSpec::Reshape {
            shape: vec![channels[0], start_side, start_side],
        },
    ];
    for (i, &out_c) in channels[1..].iter().enumerate() {
        layers.push(LayerSpec::TransposeConv2d {
            in_channels: channels[i],
            out_channels: out_c,
            kernel: 5,
            stride: 2,
            pad: 2,
            out_pad: 1,
        });
        if i + 2 < channels.len() {
            layers.push(LayerSpec::BatchNorm { features: out_c });
            layers.push(LayerSpec::leaky_relu(LEAKY_SLOPE));
        }
    }
    layers
}

fn ladder_for(input_length: usize) -> Result<(usize, Vec<usize>), ReconError> {
    // Channel counts follow the published shape column per length; 512 starts
    // on an 8x8 grid with three upsampling blocks, the rest on 4x4 with four.
    match input_length {
        128 => Ok((4, vec![256, 128, 64, 32, 3])),
        512 => Ok((8, vec![512, 256, 128, 3])),
        1024 | 2048 => Ok((4, vec![1024, 512, 256, 128, 3])),
        other => Err(ReconError::SpecError(format!(
            "input length {other} unsupported, expected one of {SUPPORTED_LENGTHS:?}"
        ))),
    }
}

/// Full-width decoder for the given embedding length.
pub fn paper_reconstructor(input_length: usize) -> Result<ReconstructorSpec, ReconError> {
    let (side, channels) = ladder_for(input_length)?;
    let spec = ReconstructorSpec {
        decoder_id: format!("recon-{input_length}"),
        input_length,
        layers: decoder_layers(input_length, side, &channels),
    };
    spec.validate()?;
    Ok(spec)
}

/// Same grid geometry as [`paper_reconstructor`] with narrow channels, sized
/// for CPU-budget runs. `base_channels` sets the mid-ladder width.
pub fn desk_reconstructor(
    input_length: usize,
    base_channels: usize,
) -> Result<ReconstructorSpec, ReconError> {
    if base_channels < 4 {
        return Err(ReconError::SpecError(format!(
            "desk decoder needs base channels >= 4, got {base_channels}"
        )));
    }
    let (side, full) = ladder_for(input_length)?;
    let b = base_channels;
    let channels: Vec<usize> = match full.len() {
        5 => vec![4 * b, 2 * b, b, (b / 2).max(4), 3],
        _ => vec![2 * b, b, (b / 2).max(4), 3],
    };
    let spec = ReconstructorSpec {
        decoder_id: format!("desk-recon-{input_length}-c{base_channels}"),
        input_length,
        layers: decoder_layers(input_length, side, &channels),
    };
    spec.validate()?;
    Ok(spec)
}
