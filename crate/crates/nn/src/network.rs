//! Sequential network container with full backward and input-only
//! vector-Jacobian products.

use ndarray::ArrayD;

use crate::error::NnError;
use crate::layer::{Cache, Layer, Tensor};

/// Per-layer, per-parameter gradient tensors, aligned with
/// [`Layer::params`] order.
pub type NetGrads = Vec<Vec<Tensor>>;

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    trainable: Vec<bool>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        let trainable = vec![true; layers.len()];
        Self { layers, trainable }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    pub fn set_trainable(&mut self, layer: usize, on: bool) {
        self.trainable[layer] = on;
    }

    pub fn set_all_trainable(&mut self, on: bool) {
        self.trainable.iter_mut().for_each(|t| *t = on);
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|p| p.len())
            .sum()
    }

    pub fn infer_output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let mut shape = input.to_vec();
        for layer in &self.layers {
            shape = layer.infer_output_shape(&shape)?;
        }
        Ok(shape)
    }

    /// Shape after each layer for the given input shape.
    pub fn infer_layer_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape = input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.infer_output_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Inference-mode forward.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Inference-mode forward that also returns the outputs of the requested
    /// layers (`taps[i]` is a layer index; the tensor is that layer's output).
    pub fn forward_taps(&self, x: &Tensor, taps: &[usize]) -> Result<(Tensor, Vec<Tensor>), NnError> {
        for &t in taps {
            if t >= self.layers.len() {
                return Err(NnError::ConfigError(format!(
                    "tap index {t} out of range for {} layers",
                    self.layers.len()
                )));
            }
        }
        let mut cur = x.clone();
        let mut outs: Vec<Option<Tensor>> = vec![None; taps.len()];
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.forward(&cur)?;
            for (slot, &t) in outs.iter_mut().zip(taps) {
                if t == i {
                    *slot = Some(cur.clone());
                }
            }
        }
        Ok((cur, outs.into_iter().map(|o| o.unwrap()).collect()))
    }

    /// Training-mode forward keeping caches for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Vec<Cache>), NnError> {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, cache) = layer.forward_train(&cur)?;
            caches.push(cache);
            cur = y;
        }
        Ok((cur, caches))
    }

    /// Inference-mode forward keeping caches and every layer output; used for
    /// vector-Jacobian products through frozen networks.
    pub fn forward_eval_cached(&self, x: &Tensor) -> Result<(Vec<Tensor>, Vec<Cache>), NnError> {
        let mut cur = x.clone();
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward_cached(&cur)?;
            caches.push(cache);
            outs.push(y.clone());
            cur = y;
        }
        Ok((outs, caches))
    }

    /// Full backward pass from the output gradient. Returns the input
    /// gradient and parameter gradients for every layer.
    pub fn backward(&self, caches: &[Cache], gy: &Tensor) -> Result<(Tensor, NetGrads), NnError> {
        if caches.len() != self.layers.len() {
            return Err(NnError::ConfigError("cache count mismatch".into()));
        }
        let mut grads: NetGrads = vec![Vec::new(); self.layers.len()];
        let mut g = gy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (gx, pg) = layer.backward(&caches[i], &g)?;
            grads[i] = pg;
            g = gx;
        }
        Ok((g, grads))
    }

    /// Backward pass to the input only, fed by cotangents at arbitrary
    /// layers. `cotangents` pairs a layer index with the gradient of the loss
    /// with respect to that layer's output; several entries may target the
    /// same layer and are summed. Parameter gradients are not produced.
    pub fn backward_to_input(
        &self,
        caches: &[Cache],
        cotangents: &[(usize, Tensor)],
    ) -> Result<Tensor, NnError> {
        if caches.len() != self.layers.len() {
            return Err(NnError::ConfigError("cache count mismatch".into()));
        }
        if cotangents.is_empty() {
            return Err(NnError::ConfigError("no cotangents supplied".into()));
        }
        for (t, _) in cotangents {
            if *t >= self.layers.len() {
                return Err(NnError::ConfigError(format!("cotangent index {t} out of range")));
            }
        }
        let mut g: Option<Tensor> = None;
        for i in (0..self.layers.len()).rev() {
            for (t, ct) in cotangents {
                if *t == i {
                    match &mut g {
                        Some(acc) => {
                            if acc.shape() != ct.shape() {
                                return Err(NnError::ShapeError(
                                    "cotangent shape mismatch".into(),
                                ));
                            }
                            *acc += ct;
                        }
                        None => g = Some(ct.clone()),
                    }
                }
            }
            if let Some(cur) = g {
                let (gx, _) = self.layers[i].backward(&caches[i], &cur)?;
                g = Some(gx);
            }
        }
        g.ok_or_else(|| NnError::ConfigError("cotangents produced no gradient".into()))
    }
}

/// Elementwise accumulate `src` into `acc`; initializes `acc` when empty.
pub fn accumulate_grads(acc: &mut NetGrads, src: &NetGrads) {
    if acc.is_empty() {
        *acc = src.clone();
        return;
    }
    for (a, s) in acc.iter_mut().zip(src) {
        for (at, st) in a.iter_mut().zip(s) {
            *at += st;
        }
    }
}

pub fn scale_grads(grads: &mut NetGrads, factor: f32) {
    for layer in grads {
        for t in layer {
            t.mapv_inplace(|v| v * factor);
        }
    }
}

/// Largest absolute value across every gradient tensor; useful for detecting
/// exploding updates.
pub fn grad_max_abs(grads: &NetGrads) -> f32 {
    let mut m = 0f32;
    for layer in grads {
        for t in layer {
            for v in t.iter() {
                m = m.max(v.abs());
            }
        }
    }
    m
}

/// True when any gradient entry is NaN or infinite.
pub fn grads_nonfinite(grads: &NetGrads) -> bool {
    grads
        .iter()
        .flatten()
        .any(|t| t.iter().any(|v| !v.is_finite()))
}

pub fn zeros_like_params(net: &Network) -> NetGrads {
    net.layers()
        .iter()
        .map(|l| l.params().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::new(vec![
            Layer::dense(6, 5, &mut rng),
            Layer::relu(),
            Layer::dense(5, 3, &mut rng),
        ])
    }

    #[test]
    fn same_seed_same_forward() {
        let a = small_net(7);
        let b = small_net(7);
        let x = crate::init::uniform(&[2, 6], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }

    #[test]
    fn taps_return_intermediate_outputs() {
        let net = small_net(3);
        let x = crate::init::uniform(&[2, 6], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let (y, taps) = net.forward_taps(&x, &[1, 2]).unwrap();
        assert_eq!(taps[0].shape(), &[2, 5]);
        assert_eq!(taps[1], y);
    }

    #[test]
    fn shape_inference_matches_forward() {
        let net = small_net(4);
        let x = crate::init::uniform(&[3, 6], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let y = net.forward(&x).unwrap();
        assert_eq!(net.infer_output_shape(&[3, 6]).unwrap(), y.shape().to_vec());
    }
}
