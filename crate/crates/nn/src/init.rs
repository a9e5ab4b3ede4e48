//! Seeded weight initializers. All randomness flows through the caller's
//! generator so two networks built with the same seed are bit-identical.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

/// Uniform(-limit, limit) tensor.
pub fn uniform(shape: &[usize], limit: f32, rng: &mut impl Rng) -> ArrayD<f32> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/product mismatch")
}

/// He-style uniform init, limit sqrt(6 / fan_in). Suits rectifier networks.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ArrayD<f32> {
    let limit = (6.0 / fan_in.max(1) as f32).sqrt();
    uniform(shape, limit, rng)
}

/// Glorot-style uniform init, limit sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> ArrayD<f32> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f32).sqrt();
    uniform(shape, limit, rng)
}

pub fn zeros(shape: &[usize]) -> ArrayD<f32> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones(shape: &[usize]) -> ArrayD<f32> {
    ArrayD::ones(IxDyn(shape))
}
