//! Deterministic CPU neural-network engine.
//!
//! Everything runs single-process on ndarray buffers with explicit seeds, so
//! a training run reproduces bit for bit given the same inputs. The layer set
//! covers small convolutional feature extractors, dense classifier stacks and
//! transpose-convolution decoders.

pub mod error;
pub mod init;
pub mod io;
pub mod layer;
pub mod loss;
pub mod network;
pub mod optim;
pub mod spec;

pub use error::NnError;
pub use layer::{ActKind, Cache, Layer, Tensor};
pub use network::{
    accumulate_grads, grad_max_abs, grads_nonfinite, scale_grads, zeros_like_params, NetGrads,
    Network,
};
pub use optim::{OptimAlgo, Optimizer};
pub use spec::{build_network, infer_spec_shapes, LayerSpec};
