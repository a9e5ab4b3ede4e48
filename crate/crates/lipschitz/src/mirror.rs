//! f64 mirror of the inference-mode forward pass.
//!
//! Verification measures `|f(x + d) - f(x)| / |d|` with perturbations down
//! to 1e-3 of the probe norm. Evaluating both points in f32 leaves
//! cancellation noise of order machine epsilon divided by the scale, which
//! would register as spurious violations on exactly-tight networks. The
//! mirror evaluates the same weights in f64 so measurement noise stays far
//! below the violation slack; a test pins it against the f32 forward pass.

use invlab_nn::{ActKind, Layer, Network};
use ndarray::{Array4, ArrayD, Axis, Ix2, Ix4, IxDyn};

use crate::error::LipschitzError;

pub(crate) fn forward_f64(
    network: &Network,
    x: ArrayD<f64>,
) -> Result<ArrayD<f64>, LipschitzError> {
    let mut cur = x;
    for layer in network.layers() {
        cur = layer_forward(layer, cur)?;
    }
    Ok(cur)
}

fn shape_err(e: ndarray::ShapeError) -> LipschitzError {
    LipschitzError::ShapeError(e.to_string())
}

fn widen(t: &invlab_nn::Tensor) -> Vec<f64> {
    t.iter().map(|&v| v as f64).collect()
}

fn layer_forward(layer: &Layer, x: ArrayD<f64>) -> Result<ArrayD<f64>, LipschitzError> {
    let out_shape = layer.infer_output_shape(x.shape())?;
    match layer {
        Layer::Dense { w, b } => {
            let x2 = x.into_dimensionality::<Ix2>().map_err(shape_err)?;
            let w2 = w
                .mapv(|v| v as f64)
                .into_dimensionality::<Ix2>()
                .map_err(shape_err)?;
            let mut y = x2.dot(&w2.t());
            let bs = widen(b);
            for mut row in y.rows_mut() {
                for (slot, bv) in row.iter_mut().zip(&bs) {
                    *slot += bv;
                }
            }
            Ok(y.into_dyn())
        }
        Layer::Conv2d { w, b, stride, pad } => {
            let x4 = x.into_dimensionality::<Ix4>().map_err(shape_err)?;
            let (n, ic, h, wd) = x4.dim();
            let (oc, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
            let (oh, ow) = (out_shape[2], out_shape[3]);
            let xs_std = x4.as_standard_layout();
            let xs = xs_std.as_slice().unwrap();
            let wk = widen(w);
            let bs = widen(b);
            let mut y = vec![0f64; n * oc * oh * ow];
            for ni in 0..n {
                for oci in 0..oc {
                    let obase = (ni * oc + oci) * oh * ow;
                    for ici in 0..ic {
                        let xbase = (ni * ic + ici) * h * wd;
                        let wbase = (oci * ic + ici) * kh * kw;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let wv = wk[wbase + ki * kw + kj];
                                for oi in 0..oh {
                                    let ii = (oi * stride + ki) as isize - *pad as isize;
                                    if ii < 0 || ii >= h as isize {
                                        continue;
                                    }
                                    let xrow = xbase + ii as usize * wd;
                                    let orow = obase + oi * ow;
                                    for oj in 0..ow {
                                        let jj = (oj * stride + kj) as isize - *pad as isize;
                                        if jj < 0 || jj >= wd as isize {
                                            continue;
                                        }
                                        y[orow + oj] += wv * xs[xrow + jj as usize];
                                    }
                                }
                            }
                        }
                    }
                    for v in &mut y[obase..obase + oh * ow] {
                        *v += bs[oci];
                    }
                }
            }
            Ok(Array4::from_shape_vec((n, oc, oh, ow), y)
                .unwrap()
                .into_dyn())
        }
        Layer::TransposeConv2d {
            w, b, stride, pad, ..
        } => {
            let x4 = x.into_dimensionality::<Ix4>().map_err(shape_err)?;
            let (n, ic, h, wd) = x4.dim();
            let (oc, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
            let (oh, ow) = (out_shape[2], out_shape[3]);
            let canvas_h = ((h - 1) * stride + kh).max(pad + oh);
            let canvas_w = ((wd - 1) * stride + kw).max(pad + ow);
            let xs_std = x4.as_standard_layout();
            let xs = xs_std.as_slice().unwrap();
            let wk = widen(w);
            let bs = widen(b);
            let mut canvas = vec![0f64; n * oc * canvas_h * canvas_w];
            for ni in 0..n {
                for ici in 0..ic {
                    let xbase = (ni * ic + ici) * h * wd;
                    for oci in 0..oc {
                        let cbase = (ni * oc + oci) * canvas_h * canvas_w;
                        let wbase = (ici * oc + oci) * kh * kw;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let wv = wk[wbase + ki * kw + kj];
                                for oi in 0..h {
                                    let crow = cbase + (oi * stride + ki) * canvas_w + kj;
                                    let xrow = xbase + oi * wd;
                                    for oj in 0..wd {
                                        canvas[crow + oj * stride] += wv * xs[xrow + oj];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let mut y = vec![0f64; n * oc * oh * ow];
            for ni in 0..n {
                for oci in 0..oc {
                    let cbase = (ni * oc + oci) * canvas_h * canvas_w;
                    let obase = (ni * oc + oci) * oh * ow;
                    let bv = bs[oci];
                    for i in 0..oh {
                        let crow = cbase + (i + pad) * canvas_w + pad;
                        for j in 0..ow {
                            y[obase + i * ow + j] = canvas[crow + j] + bv;
                        }
                    }
                }
            }
            Ok(Array4::from_shape_vec((n, oc, oh, ow), y)
                .unwrap()
                .into_dyn())
        }
        Layer::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
            eps,
            ..
        } => {
            let c = x.shape()[1];
            let mut y = x;
            for ch in 0..c {
                let g = gamma[[ch]] as f64;
                let bt = beta[[ch]] as f64;
                let m = running_mean[[ch]] as f64;
                let inv = 1.0 / ((running_var[[ch]] as f64) + *eps as f64).sqrt();
                let mut lane = y.index_axis_mut(Axis(1), ch);
                lane.mapv_inplace(|v| g * (v - m) * inv + bt);
            }
            Ok(y)
        }
        Layer::Act(kind) => Ok(match kind {
            ActKind::Relu => x.mapv(|v| v.max(0.0)),
            ActKind::LeakyRelu { alpha } => {
                let a = *alpha as f64;
                x.mapv(|v| if v > 0.0 { v } else { a * v })
            }
            ActKind::Elu { alpha } => {
                let a = *alpha as f64;
                x.mapv(|v| if v > 0.0 { v } else { a * (v.exp() - 1.0) })
            }
            ActKind::Tanh => x.mapv(f64::tanh),
        }),
        Layer::PRelu { alpha } => {
            let a = alpha[[0]] as f64;
            Ok(x.mapv(|v| if v > 0.0 { v } else { a * v }))
        }
        Layer::MaxPool2d { kernel, stride } => {
            let x4 = x.into_dimensionality::<Ix4>().map_err(shape_err)?;
            let (n, c, h, wd) = x4.dim();
            let (oh, ow) = (out_shape[2], out_shape[3]);
            let xs_std = x4.as_standard_layout();
            let xs = xs_std.as_slice().unwrap();
            let mut y = vec![0f64; n * c * oh * ow];
            for nc in 0..n * c {
                let base = nc * h * wd;
                let obase = nc * oh * ow;
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        for ki in 0..*kernel {
                            let xrow = base + (oi * stride + ki) * wd + oj * stride;
                            for kj in 0..*kernel {
                                if xs[xrow + kj] > best {
                                    best = xs[xrow + kj];
                                }
                            }
                        }
                        y[obase + oi * ow + oj] = best;
                    }
                }
            }
            Ok(Array4::from_shape_vec((n, c, oh, ow), y)
                .unwrap()
                .into_dyn())
        }
        Layer::GlobalAvgPool => {
            let x4 = x.into_dimensionality::<Ix4>().map_err(shape_err)?;
            let hw = (x4.dim().2 * x4.dim().3) as f64;
            Ok(x4
                .sum_axis(Axis(3))
                .sum_axis(Axis(2))
                .mapv(|v| v / hw)
                .into_dyn())
        }
        Layer::Flatten | Layer::Reshape { .. } => x
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(&out_shape))
            .map_err(shape_err),
    }
}
