//! Certified Lipschitz bounds for decoder networks.
//!
//! A bound on every layer (spectral norms for the linear pieces, slope
//! bounds for activations, contraction arguments for pooling and
//! normalization) multiplies out to a network-wide constant L with
//! `|G(x) - G(x + d)| <= L * |d|`. The verifier then attacks that
//! inequality with random probe pairs and reports how close they came.
//!
//! Dense spectral norms come from two-sided power iteration. Convolution
//! spectra come from the per-frequency singular values of the filter's
//! 2-D discrete Fourier transform, which diagonalizes circular
//! convolution; transpose convolutions reduce to ordinary convolutions on
//! a zero-interleaved canvas whose construction never expands distances.

mod bound;
mod error;
mod mirror;
mod spectral;
mod verify;

pub use bound::{
    network_lipschitz_bound, BoundOptions, LayerBound, LayerKind, MethodTag, NetworkBound,
};
pub use error::LipschitzError;
pub use spectral::{conv_singular_values, dense_spectral_norm, transpose_conv_lipschitz};
pub use verify::{verify_bound, VerifyOptions, VerifyReport};
