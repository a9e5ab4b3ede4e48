//! Layer definitions with explicit forward and backward passes.
//!
//! Tensors are `ArrayD<f32>`. Image data is laid out NCHW; dense data is
//! (batch, features). Convolutions run through an im2col/matmul path and the
//! transpose convolution scatters matmul columns straight onto the output
//! canvas, which keeps its cost at one matmul of the paired convolution.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix1, Ix2, Ix4, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::init;

pub type Tensor = ArrayD<f32>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ActKind {
    Relu,
    LeakyRelu { alpha: f32 },
    Elu { alpha: f32 },
    Tanh,
}

#[derive(Debug, Clone)]
pub enum Layer {
    /// Fully connected layer, weight (out, in), bias (out).
    Dense { w: Tensor, b: Tensor },
    /// Convolution, weight (out_c, in_c, kh, kw), symmetric zero padding.
    Conv2d { w: Tensor, b: Tensor, stride: usize, pad: usize },
    /// Transpose convolution, weight (in_c, out_c, kh, kw). `out_pad` extends
    /// the bottom/right edge so stride-2 kernels can double spatial size.
    TransposeConv2d { w: Tensor, b: Tensor, stride: usize, pad: usize, out_pad: usize },
    /// Per-channel normalization over 2-D (N, C) or 4-D (N, C, H, W) input.
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
        eps: f32,
        momentum: f32,
    },
    Act(ActKind),
    /// Leaky rectifier with one learnable slope shared across the layer.
    PRelu { alpha: Tensor },
    MaxPool2d { kernel: usize, stride: usize },
    GlobalAvgPool,
    Flatten,
    /// Reshapes each sample to `shape` (batch axis untouched).
    Reshape { shape: Vec<usize> },
}

/// Values captured during a forward pass that backward needs.
#[derive(Debug, Clone)]
pub enum Cache {
    Input { x: Tensor },
    BatchNorm { x_hat: Tensor, inv_std: Vec<f32>, train: bool },
    MaxPool { x_shape: Vec<usize>, argmax: Vec<usize> },
    Shape { x_shape: Vec<usize> },
    None,
}

impl Layer {
    pub fn dense(in_f: usize, out_f: usize, rng: &mut impl Rng) -> Self {
        Layer::Dense {
            w: init::he_uniform(&[out_f, in_f], in_f, rng),
            b: init::zeros(&[out_f]),
        }
    }

    pub fn conv2d(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        Layer::Conv2d {
            w: init::he_uniform(&[out_c, in_c, k, k], in_c * k * k, rng),
            b: init::zeros(&[out_c]),
            stride,
            pad,
        }
    }

    pub fn tconv2d(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Layer::TransposeConv2d {
            w: init::he_uniform(&[in_c, out_c, k, k], in_c * k * k, rng),
            b: init::zeros(&[out_c]),
            stride,
            pad,
            out_pad,
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        Layer::BatchNorm {
            gamma: init::ones(&[channels]),
            beta: init::zeros(&[channels]),
            running_mean: init::zeros(&[channels]),
            running_var: init::ones(&[channels]),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn relu() -> Self {
        Layer::Act(ActKind::Relu)
    }

    pub fn leaky_relu(alpha: f32) -> Self {
        Layer::Act(ActKind::LeakyRelu { alpha })
    }

    pub fn prelu(init_alpha: f32) -> Self {
        Layer::PRelu {
            alpha: ArrayD::from_elem(IxDyn(&[1]), init_alpha),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::TransposeConv2d { .. } => "tconv2d",
            Layer::BatchNorm { .. } => "batch_norm",
            Layer::Act(ActKind::Relu) => "relu",
            Layer::Act(ActKind::LeakyRelu { .. }) => "leaky_relu",
            Layer::Act(ActKind::Elu { .. }) => "elu",
            Layer::Act(ActKind::Tanh) => "tanh",
            Layer::PRelu { .. } => "prelu",
            Layer::MaxPool2d { .. } => "max_pool2d",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Flatten => "flatten",
            Layer::Reshape { .. } => "reshape",
        }
    }

    /// Parameters the optimizer may update.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { w, b } => vec![w, b],
            Layer::Conv2d { w, b, .. } => vec![w, b],
            Layer::TransposeConv2d { w, b, .. } => vec![w, b],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            Layer::PRelu { alpha } => vec![alpha],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { w, b } => vec![w, b],
            Layer::Conv2d { w, b, .. } => vec![w, b],
            Layer::TransposeConv2d { w, b, .. } => vec![w, b],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            Layer::PRelu { alpha } => vec![alpha],
            _ => Vec::new(),
        }
    }

    /// Every tensor that must survive a save/load round trip, including
    /// normalization running statistics.
    pub fn persisted(&self) -> Vec<&Tensor> {
        match self {
            Layer::BatchNorm { gamma, beta, running_mean, running_var, .. } => {
                vec![gamma, beta, running_mean, running_var]
            }
            other => other.params(),
        }
    }

    pub fn persisted_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::BatchNorm { gamma, beta, running_mean, running_var, .. } => {
                vec![gamma, beta, running_mean, running_var]
            }
            other => other.params_mut(),
        }
    }

    /// Output shape for a given input shape (batch axis included).
    pub fn infer_output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let bad = |msg: String| Err(NnError::ShapeError(msg));
        match self {
            Layer::Dense { w, .. } => {
                let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
                if input.len() != 2 || input[1] != in_f {
                    return bad(format!("dense expects (N, {in_f}), got {input:?}"));
                }
                Ok(vec![input[0], out_f])
            }
            Layer::Conv2d { w, stride, pad, .. } => {
                let (oc, ic, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
                if input.len() != 4 || input[1] != ic {
                    return bad(format!("conv2d expects (N, {ic}, H, W), got {input:?}"));
                }
                let (h, w_) = (input[2], input[3]);
                if h + 2 * pad < kh || w_ + 2 * pad < kw {
                    return bad(format!("conv2d kernel {kh}x{kw} larger than padded input"));
                }
                Ok(vec![
                    input[0],
                    oc,
                    (h + 2 * pad - kh) / stride + 1,
                    (w_ + 2 * pad - kw) / stride + 1,
                ])
            }
            Layer::TransposeConv2d { w, stride, pad, out_pad, .. } => {
                let (ic, oc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
                if input.len() != 4 || input[1] != ic {
                    return bad(format!("tconv2d expects (N, {ic}, H, W), got {input:?}"));
                }
                let oh = (input[2] - 1) * stride + kh + out_pad;
                let ow = (input[3] - 1) * stride + kw + out_pad;
                if oh < 2 * pad || ow < 2 * pad {
                    return bad("tconv2d padding exceeds output extent".into());
                }
                Ok(vec![input[0], oc, oh - 2 * pad, ow - 2 * pad])
            }
            Layer::BatchNorm { gamma, .. } => {
                if input.len() < 2 || input[1] != gamma.len() {
                    return bad(format!(
                        "batch_norm expects channel axis of {}, got {input:?}",
                        gamma.len()
                    ));
                }
                Ok(input.to_vec())
            }
            Layer::Act(_) | Layer::PRelu { .. } => Ok(input.to_vec()),
            Layer::MaxPool2d { kernel, stride } => {
                if input.len() != 4 || input[2] < *kernel || input[3] < *kernel {
                    return bad(format!("max_pool2d needs 4-D input at least {kernel} wide"));
                }
                Ok(vec![
                    input[0],
                    input[1],
                    (input[2] - kernel) / stride + 1,
                    (input[3] - kernel) / stride + 1,
                ])
            }
            Layer::GlobalAvgPool => {
                if input.len() != 4 {
                    return bad(format!("global_avg_pool needs 4-D input, got {input:?}"));
                }
                Ok(vec![input[0], input[1]])
            }
            Layer::Flatten => {
                if input.len() < 2 {
                    return bad("flatten needs a batch axis plus data axes".into());
                }
                Ok(vec![input[0], input[1..].iter().product()])
            }
            Layer::Reshape { shape } => {
                let want: usize = shape.iter().product();
                let have: usize = input[1..].iter().product();
                if want != have {
                    return bad(format!("reshape target {shape:?} mismatches {have} elements"));
                }
                let mut out = vec![input[0]];
                out.extend_from_slice(shape);
                Ok(out)
            }
        }
    }

    /// Inference-mode forward.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        Ok(self.forward_impl(x, false, false)?.0)
    }

    /// Training-mode forward; batch normalization uses batch statistics and
    /// updates its running estimates.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Cache), NnError> {
        let (y, cache, stats) = self.forward_impl(x, true, true)?;
        if let (Layer::BatchNorm { running_mean, running_var, momentum, .. }, Some((mean, var))) =
            (&mut *self, stats)
        {
            let m = *momentum;
            for (r, v) in running_mean.iter_mut().zip(&mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in running_var.iter_mut().zip(&var) {
                *r = (1.0 - m) * *r + m * v;
            }
        }
        Ok((y, cache))
    }

    /// Inference-mode forward that still records a cache, for vector-Jacobian
    /// products through frozen networks.
    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, Cache), NnError> {
        let (y, cache, _) = self.forward_impl(x, false, true)?;
        Ok((y, cache))
    }

    #[allow(clippy::type_complexity)]
    fn forward_impl(
        &self,
        x: &Tensor,
        train: bool,
        want_cache: bool,
    ) -> Result<(Tensor, Cache, Option<(Vec<f32>, Vec<f32>)>), NnError> {
        let cache_input = |x: &Tensor| {
            if want_cache {
                Cache::Input { x: x.clone() }
            } else {
                Cache::None
            }
        };
        match self {
            Layer::Dense { w, b } => {
                let x2 = as2(x)?;
                let w2 = as2(w)?;
                if x2.ncols() != w2.ncols() {
                    return Err(NnError::ShapeError(format!(
                        "dense input width {} vs weight width {}",
                        x2.ncols(),
                        w2.ncols()
                    )));
                }
                let mut y = x2.dot(&w2.t());
                let b1 = b.view().into_dimensionality::<Ix1>().unwrap();
                y += &b1.insert_axis(Axis(0));
                Ok((y.into_dyn(), cache_input(x), None))
            }
            Layer::Conv2d { w, b, stride, pad } => {
                let x4 = as4(x)?;
                let out_shape = self.infer_output_shape(x.shape())?;
                let (n, oc, oh, ow) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
                let (ic, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
                let cols = gather_windows(&x4, kh, kw, *stride, *pad, oh, ow);
                let w_mat = w
                    .view()
                    .into_shape_with_order((oc, ic * kh * kw))
                    .unwrap();
                let out_mat = w_mat.dot(&cols);
                let mut y = out_mat
                    .into_shape_with_order((oc, n, oh, ow))
                    .unwrap()
                    .permuted_axes([1, 0, 2, 3])
                    .as_standard_layout()
                    .to_owned();
                add_channel_bias(&mut y, b);
                Ok((y.into_dyn(), cache_input(x), None))
            }
            Layer::TransposeConv2d { w, b, stride, pad, .. } => {
                let x4 = as4(x)?;
                let out_shape = self.infer_output_shape(x.shape())?;
                let (n, oc, oh, ow) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
                let (ic, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
                let (h, wd) = (x.shape()[2], x.shape()[3]);
                let x_mat = x4
                    .permuted_axes([1, 0, 2, 3])
                    .as_standard_layout()
                    .into_shape_with_order((ic, n * h * wd))
                    .unwrap()
                    .to_owned();
                let w_mat = w
                    .view()
                    .into_shape_with_order((ic, oc * kh * kw))
                    .unwrap();
                let cols = w_mat.t().dot(&x_mat);
                let mut y = scatter_windows(&cols, n, oc, h, wd, kh, kw, *stride, *pad, oh, ow);
                add_channel_bias(&mut y, b);
                Ok((y.into_dyn(), cache_input(x), None))
            }
            Layer::BatchNorm { gamma, beta, running_mean, running_var, eps, .. } => {
                if x.ndim() != 2 && x.ndim() != 4 {
                    return Err(NnError::ShapeError(format!(
                        "batch_norm supports 2-D or 4-D input, got {:?}",
                        x.shape()
                    )));
                }
                let c = x.shape()[1];
                if c != gamma.len() {
                    return Err(NnError::ShapeError(format!(
                        "batch_norm channels {c} vs parameters {}",
                        gamma.len()
                    )));
                }
                let (mean, var): (Vec<f32>, Vec<f32>) = if train {
                    let mut mean = Vec::with_capacity(c);
                    let mut var = Vec::with_capacity(c);
                    for ch in 0..c {
                        let lane = x.index_axis(Axis(1), ch);
                        let m_count = lane.len() as f64;
                        let s: f64 = lane.iter().map(|&v| v as f64).sum();
                        let mu = s / m_count;
                        let sq: f64 = lane.iter().map(|&v| (v as f64 - mu).powi(2)).sum();
                        mean.push(mu as f32);
                        var.push((sq / m_count) as f32);
                    }
                    (mean, var)
                } else {
                    (running_mean.iter().copied().collect(), running_var.iter().copied().collect())
                };
                let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut x_hat = x.clone();
                for ch in 0..c {
                    let mut lane = x_hat.index_axis_mut(Axis(1), ch);
                    lane.mapv_inplace(|v| (v - mean[ch]) * inv_std[ch]);
                }
                let mut y = x_hat.clone();
                for ch in 0..c {
                    let mut lane = y.index_axis_mut(Axis(1), ch);
                    let (g, bt) = (gamma[[ch]], beta[[ch]]);
                    lane.mapv_inplace(|v| g * v + bt);
                }
                let cache = if want_cache {
                    Cache::BatchNorm { x_hat, inv_std, train }
                } else {
                    Cache::None
                };
                Ok((y, cache, train.then_some((mean, var))))
            }
            Layer::Act(kind) => {
                let y = match kind {
                    ActKind::Relu => x.mapv(|v| v.max(0.0)),
                    ActKind::LeakyRelu { alpha } => {
                        x.mapv(|v| if v > 0.0 { v } else { alpha * v })
                    }
                    ActKind::Elu { alpha } => {
                        x.mapv(|v| if v > 0.0 { v } else { alpha * (v.exp() - 1.0) })
                    }
                    ActKind::Tanh => x.mapv(f32::tanh),
                };
                Ok((y, cache_input(x), None))
            }
            Layer::PRelu { alpha } => {
                let a = alpha[[0]];
                let y = x.mapv(|v| if v > 0.0 { v } else { a * v });
                Ok((y, cache_input(x), None))
            }
            Layer::MaxPool2d { kernel, stride } => {
                let x4 = as4(x)?;
                let out_shape = self.infer_output_shape(x.shape())?;
                let (n, c, oh, ow) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
                let (h, w) = (x.shape()[2], x.shape()[3]);
                let xs = x4.as_standard_layout();
                let xs = xs.as_slice().unwrap();
                let mut y = vec![f32::NEG_INFINITY; n * c * oh * ow];
                let mut argmax = vec![0usize; n * c * oh * ow];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * h * w;
                        for oi in 0..oh {
                            for oj in 0..ow {
                                let oidx = ((ni * c + ci) * oh + oi) * ow + oj;
                                for ki in 0..*kernel {
                                    let ii = oi * stride + ki;
                                    for kj in 0..*kernel {
                                        let jj = oj * stride + kj;
                                        let v = xs[base + ii * w + jj];
                                        if v > y[oidx] {
                                            y[oidx] = v;
                                            argmax[oidx] = base + ii * w + jj;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let y = Array4::from_shape_vec((n, c, oh, ow), y).unwrap().into_dyn();
                let cache = if want_cache {
                    Cache::MaxPool { x_shape: x.shape().to_vec(), argmax }
                } else {
                    Cache::None
                };
                Ok((y, cache, None))
            }
            Layer::GlobalAvgPool => {
                let x4 = as4(x)?;
                let hw = (x.shape()[2] * x.shape()[3]) as f32;
                let y = x4.sum_axis(Axis(3)).sum_axis(Axis(2)).mapv(|v| v / hw);
                let cache = if want_cache {
                    Cache::Shape { x_shape: x.shape().to_vec() }
                } else {
                    Cache::None
                };
                Ok((y.into_dyn(), cache, None))
            }
            Layer::Flatten | Layer::Reshape { .. } => {
                let out_shape = self.infer_output_shape(x.shape())?;
                let y = x
                    .to_owned()
                    .into_shape_with_order(IxDyn(&out_shape))
                    .map_err(|e| NnError::ShapeError(e.to_string()))?;
                let cache = if want_cache {
                    Cache::Shape { x_shape: x.shape().to_vec() }
                } else {
                    Cache::None
                };
                Ok((y, cache, None))
            }
        }
    }

    /// Backward pass: returns the gradient with respect to the input plus one
    /// gradient tensor per entry of [`Layer::params`].
    pub fn backward(&self, cache: &Cache, gy: &Tensor) -> Result<(Tensor, Vec<Tensor>), NnError> {
        match (self, cache) {
            (Layer::Dense { w, .. }, Cache::Input { x }) => {
                let x2 = as2(x)?;
                let g2 = as2(gy)?;
                let w2 = as2(w)?;
                let gw = g2.t().dot(&x2);
                let gb = g2.sum_axis(Axis(0));
                let gx = g2.dot(&w2);
                Ok((gx.into_dyn(), vec![gw.into_dyn(), gb.into_dyn()]))
            }
            (Layer::Conv2d { w, stride, pad, .. }, Cache::Input { x }) => {
                let x4 = as4(x)?;
                let g4 = as4(gy)?;
                let (n, oc, oh, ow) = g4.dim();
                let (ic, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
                let (h, wd) = (x.shape()[2], x.shape()[3]);
                let cols = gather_windows(&x4, kh, kw, *stride, *pad, oh, ow);
                let gy_mat = g4
                    .permuted_axes([1, 0, 2, 3])
                    .as_standard_layout()
                    .into_shape_with_order((oc, n * oh * ow))
                    .unwrap()
                    .to_owned();
                let gw = gy_mat
                    .dot(&cols.t())
                    .into_shape_with_order((oc, ic, kh, kw))
                    .unwrap();
                let gb = gy_mat.sum_axis(Axis(1));
                let w_mat = w.view().into_shape_with_order((oc, ic * kh * kw)).unwrap();
                let gcols = w_mat.t().dot(&gy_mat);
                let gx = scatter_windows(&gcols, n, ic, oh, ow, kh, kw, *stride, *pad, h, wd);
                Ok((gx.into_dyn(), vec![gw.into_dyn(), gb.into_dyn()]))
            }
            (Layer::TransposeConv2d { w, stride, pad, .. }, Cache::Input { x }) => {
                let x4 = as4(x)?;
                let g4 = as4(gy)?;
                let (ic, oc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
                let (n, h, wd) = (x.shape()[0], x.shape()[2], x.shape()[3]);
                let cols_g = gather_windows(&g4, kh, kw, *stride, *pad, h, wd);
                let w_mat = w.view().into_shape_with_order((ic, oc * kh * kw)).unwrap();
                let gx = w_mat
                    .dot(&cols_g)
                    .into_shape_with_order((ic, n, h, wd))
                    .unwrap()
                    .permuted_axes([1, 0, 2, 3])
                    .as_standard_layout()
                    .to_owned();
                let x_mat = x4
                    .permuted_axes([1, 0, 2, 3])
                    .as_standard_layout()
                    .into_shape_with_order((ic, n * h * wd))
                    .unwrap()
                    .to_owned();
                let gw = x_mat
                    .dot(&cols_g.t())
                    .into_shape_with_order((ic, oc, kh, kw))
                    .unwrap();
                let gb = g4
                    .sum_axis(Axis(3))
                    .sum_axis(Axis(2))
                    .sum_axis(Axis(0));
                Ok((gx.into_dyn(), vec![gw.into_dyn(), gb.into_dyn()]))
            }
            (Layer::BatchNorm { gamma, .. }, Cache::BatchNorm { x_hat, inv_std, train }) => {
                let c = x_hat.shape()[1];
                let mut g_gamma = Array1::<f32>::zeros(c);
                let mut g_beta = Array1::<f32>::zeros(c);
                for ch in 0..c {
                    let gl = gy.index_axis(Axis(1), ch);
                    let xl = x_hat.index_axis(Axis(1), ch);
                    let mut sg = 0f64;
                    let mut sgx = 0f64;
                    for (g, xh) in gl.iter().zip(xl.iter()) {
                        sg += *g as f64;
                        sgx += (*g as f64) * (*xh as f64);
                    }
                    g_beta[ch] = sg as f32;
                    g_gamma[ch] = sgx as f32;
                }
                let mut gx = gy.clone();
                for ch in 0..c {
                    let scale = gamma[[ch]] * inv_std[ch];
                    let mut lane = gx.index_axis_mut(Axis(1), ch);
                    if *train {
                        let m = lane.len() as f32;
                        let (sg, sgx) = (g_beta[ch], g_gamma[ch]);
                        let xl = x_hat.index_axis(Axis(1), ch);
                        ndarray::Zip::from(&mut lane).and(&xl).for_each(|g, xh| {
                            *g = scale / m * (m * *g - sg - xh * sgx);
                        });
                    } else {
                        lane.mapv_inplace(|g| g * scale);
                    }
                }
                Ok((gx, vec![g_gamma.into_dyn(), g_beta.into_dyn()]))
            }
            (Layer::Act(kind), Cache::Input { x }) => {
                let mut gx = gy.clone();
                match kind {
                    ActKind::Relu => {
                        ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                            if v <= 0.0 {
                                *g = 0.0;
                            }
                        });
                    }
                    ActKind::LeakyRelu { alpha } => {
                        ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                            if v <= 0.0 {
                                *g *= alpha;
                            }
                        });
                    }
                    ActKind::Elu { alpha } => {
                        ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                            if v <= 0.0 {
                                *g *= alpha * v.exp();
                            }
                        });
                    }
                    ActKind::Tanh => {
                        ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                            let t = v.tanh();
                            *g *= 1.0 - t * t;
                        });
                    }
                }
                Ok((gx, Vec::new()))
            }
            (Layer::PRelu { alpha }, Cache::Input { x }) => {
                let a = alpha[[0]];
                let mut gx = gy.clone();
                let mut ga = 0f64;
                ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
                    if v <= 0.0 {
                        ga += (*g as f64) * (v as f64);
                        *g *= a;
                    }
                });
                Ok((gx, vec![ArrayD::from_elem(IxDyn(&[1]), ga as f32)]))
            }
            (Layer::MaxPool2d { .. }, Cache::MaxPool { x_shape, argmax }) => {
                let mut gx = vec![0f32; x_shape.iter().product()];
                let gys = gy.as_standard_layout();
                let gys = gys.as_slice().unwrap();
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += gys[o];
                }
                Ok((
                    ArrayD::from_shape_vec(IxDyn(x_shape), gx).unwrap(),
                    Vec::new(),
                ))
            }
            (Layer::GlobalAvgPool, Cache::Shape { x_shape }) => {
                let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
                let g2 = as2(gy)?;
                let mut gx = Array4::<f32>::zeros((n, c, h, w));
                let inv = 1.0 / (h * w) as f32;
                for ni in 0..n {
                    for ci in 0..c {
                        let v = g2[[ni, ci]] * inv;
                        gx.index_axis_mut(Axis(0), ni)
                            .index_axis_mut(Axis(0), ci)
                            .fill(v);
                    }
                }
                Ok((gx.into_dyn(), Vec::new()))
            }
            (Layer::Flatten | Layer::Reshape { .. }, Cache::Shape { x_shape }) => {
                let gx = gy
                    .to_owned()
                    .into_shape_with_order(IxDyn(x_shape))
                    .map_err(|e| NnError::ShapeError(e.to_string()))?;
                Ok((gx, Vec::new()))
            }
            _ => Err(NnError::ShapeError(format!(
                "cache does not match layer {}",
                self.name()
            ))),
        }
    }
}

fn as2<'a>(x: &'a Tensor) -> Result<ndarray::ArrayView2<'a, f32>, NnError> {
    x.view()
        .into_dimensionality::<Ix2>()
        .map_err(|_| NnError::ShapeError(format!("expected 2-D tensor, got {:?}", x.shape())))
}

fn as4<'a>(x: &'a Tensor) -> Result<ndarray::ArrayView4<'a, f32>, NnError> {
    x.view()
        .into_dimensionality::<Ix4>()
        .map_err(|_| NnError::ShapeError(format!("expected 4-D tensor, got {:?}", x.shape())))
}

fn add_channel_bias(y: &mut Array4<f32>, b: &Tensor) {
    for (ch, mut lane) in y.axis_iter_mut(Axis(1)).enumerate() {
        let v = b[[ch]];
        lane.mapv_inplace(|o| o + v);
    }
}

/// Collects sliding windows of `x` (N, C, H, W) anchored at
/// `(i*stride - pad, j*stride - pad)` for `i < num_h`, `j < num_w`.
/// Out-of-range reads give zeros. Result is (C*KH*KW, N*num_h*num_w) with
/// column index `((n*num_h)+i)*num_w + j`.
fn gather_windows(
    x: &ndarray::ArrayView4<f32>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    num_h: usize,
    num_w: usize,
) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().unwrap();
    let ncols = n * num_h * num_w;
    let mut cols = vec![0f32; c * kh * kw * ncols];
    for ni in 0..n {
        for ci in 0..c {
            let xbase = (ni * c + ci) * h * w;
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    let rbase = row * ncols + ni * num_h * num_w;
                    for oi in 0..num_h {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let xrow = xbase + ii as usize * w;
                        let crow = rbase + oi * num_w;
                        for oj in 0..num_w {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            cols[crow + oj] = xs[xrow + jj as usize];
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * kh * kw, ncols), cols).unwrap()
}

/// Adjoint of [`gather_windows`]: accumulates window columns onto a zero
/// canvas at `(i*stride, j*stride)`, then crops `crop` from the top/left and
/// keeps `out_h` by `out_w`.
#[allow(clippy::too_many_arguments)]
fn scatter_windows(
    cols: &Array2<f32>,
    n: usize,
    c: usize,
    num_h: usize,
    num_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    crop: usize,
    out_h: usize,
    out_w: usize,
) -> Array4<f32> {
    let canvas_h = ((num_h - 1) * stride + kh).max(crop + out_h);
    let canvas_w = ((num_w - 1) * stride + kw).max(crop + out_w);
    let mut canvas = vec![0f32; n * c * canvas_h * canvas_w];
    let ncols = n * num_h * num_w;
    let cs = cols.as_slice().unwrap();
    for ni in 0..n {
        for ci in 0..c {
            let obase = (ni * c + ci) * canvas_h * canvas_w;
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    let rbase = row * ncols + ni * num_h * num_w;
                    for oi in 0..num_h {
                        let orow = obase + (oi * stride + ki) * canvas_w + kj;
                        let crow = rbase + oi * num_w;
                        for oj in 0..num_w {
                            canvas[orow + oj * stride] += cs[crow + oj];
                        }
                    }
                }
            }
        }
    }
    let mut out = Array4::<f32>::zeros((n, c, out_h, out_w));
    {
        let os = out.as_slice_mut().unwrap();
        for ni in 0..n {
            for ci in 0..c {
                let cbase = (ni * c + ci) * canvas_h * canvas_w;
                let obase = (ni * c + ci) * out_h * out_w;
                for i in 0..out_h {
                    let crow = cbase + (i + crop) * canvas_w + crop;
                    let orow = obase + i * out_w;
                    os[orow..orow + out_w].copy_from_slice(&canvas[crow..crow + out_w]);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_forward_matches_manual() {
        let layer = Layer::Dense {
            w: arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).into_dyn(),
            b: ndarray::arr1(&[0.5, -0.5, 0.0]).into_dyn(),
        };
        let x = arr2(&[[1.0, 1.0]]).into_dyn();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3]);
        assert_eq!(y[[0, 0]], 3.5);
        assert_eq!(y[[0, 1]], 6.5);
        assert_eq!(y[[0, 2]], 11.0);
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        // 1x1 kernel with weight 1 is the identity map.
        let layer = Layer::Conv2d {
            w: ArrayD::from_shape_vec(IxDyn(&[1, 1, 1, 1]), vec![1.0]).unwrap(),
            b: init::zeros(&[1]),
            stride: 1,
            pad: 0,
        };
        let x = ArrayD::from_shape_vec(IxDyn(&[1, 1, 3, 3]), (0..9).map(|v| v as f32).collect())
            .unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_3x3_sum_kernel() {
        let layer = Layer::Conv2d {
            w: ArrayD::from_elem(IxDyn(&[1, 1, 3, 3]), 1.0),
            b: init::zeros(&[1]),
            stride: 1,
            pad: 0,
        };
        let x = ArrayD::ones(IxDyn(&[1, 1, 4, 4]));
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.iter().all(|&v| (v - 9.0).abs() < 1e-6));
    }

    #[test]
    fn tconv_doubles_spatial_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Layer::tconv2d(4, 2, 5, 2, 2, 1, &mut rng);
        let x = ArrayD::ones(IxDyn(&[2, 4, 8, 8]));
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 16, 16]);
    }

    #[test]
    fn tconv_equals_zero_interleaved_conv() {
        // A stride-s transpose convolution must agree with the matching
        // convolution applied to the zero-interleaved input.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (ic, oc, k, s, p, op) = (3, 2, 5, 2, 2, 1);
        let t = Layer::tconv2d(ic, oc, k, s, p, op, &mut rng);
        let (w, b) = match &t {
            Layer::TransposeConv2d { w, b, .. } => (w.clone(), b.clone()),
            _ => unreachable!(),
        };
        let x = init::uniform(&[1, ic, 6, 6], 1.0, &mut rng);
        let y = t.forward(&x).unwrap();

        // Interleave: place x[i,j] at (i*s, j*s) on a canvas sized so that a
        // stride-1 convolution with the flipped kernel reproduces the output.
        let h = 6;
        let canvas = (h - 1) * s + 1;
        let mut xi = ArrayD::zeros(IxDyn(&[1, ic, canvas + 2 * (k - 1 - p) + op, canvas + 2 * (k - 1 - p) + op]));
        let off = k - 1 - p;
        for ci in 0..ic {
            for i in 0..h {
                for j in 0..h {
                    xi[[0, ci, off + i * s, off + j * s]] = x[[0, ci, i, j]];
                }
            }
        }
        // Flip the kernel and swap in/out axes to express the scatter as a
        // gather.
        let mut wf = ArrayD::zeros(IxDyn(&[oc, ic, k, k]));
        for a in 0..ic {
            for o in 0..oc {
                for i in 0..k {
                    for j in 0..k {
                        wf[[o, a, k - 1 - i, k - 1 - j]] = w[[a, o, i, j]];
                    }
                }
            }
        }
        let conv = Layer::Conv2d { w: wf, b, stride: 1, pad: 0 };
        let y2 = conv.forward(&xi).unwrap();
        assert_eq!(y.shape(), y2.shape());
        for (a, b) in y.iter().zip(y2.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn maxpool_picks_maximum() {
        let layer = Layer::MaxPool2d { kernel: 2, stride: 2 };
        let x = ArrayD::from_shape_vec(
            IxDyn(&[1, 1, 2, 4]),
            vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 9.0],
        )
        .unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 0, 1]], 9.0);
    }

    #[test]
    fn batch_norm_train_normalizes_batch() {
        let mut layer = Layer::batch_norm(1);
        let x = ArrayD::from_shape_vec(IxDyn(&[4, 1]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = layer.forward_train(&x).unwrap();
        let mean: f32 = y.iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-5);
        let var: f32 = y.iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!((var - 1.0).abs() < 1e-2);
    }

    #[test]
    fn reshape_roundtrip() {
        let layer = Layer::Reshape { shape: vec![2, 2, 2] };
        let x = init::uniform(&[3, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let (y, cache) = layer.forward_cached(&x).unwrap();
        assert_eq!(y.shape(), &[3, 2, 2, 2]);
        let (gx, _) = layer.backward(&cache, &y).unwrap();
        assert_eq!(gx, x);
    }
}
