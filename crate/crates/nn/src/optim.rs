//! First-order optimizers operating on a [`Network`] plus matching gradients.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::layer::Tensor;
use crate::network::{NetGrads, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "algo")]
pub enum OptimAlgo {
    Sgd { momentum: f32 },
    Adam { beta1: f32, beta2: f32, eps: f32 },
    Adagrad { eps: f32 },
}

impl OptimAlgo {
    pub fn sgd(momentum: f32) -> Self {
        OptimAlgo::Sgd { momentum }
    }

    pub fn adam() -> Self {
        OptimAlgo::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn adagrad() -> Self {
        OptimAlgo::Adagrad { eps: 1e-10 }
    }

    fn slots(&self) -> usize {
        match self {
            OptimAlgo::Sgd { .. } => 1,
            OptimAlgo::Adam { .. } => 2,
            OptimAlgo::Adagrad { .. } => 1,
        }
    }
}

/// Optimizer with internal state keyed positionally to the network layout.
/// Reusing one optimizer across differently shaped networks is an error.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub algo: OptimAlgo,
    pub lr: f32,
    state: Vec<Vec<Vec<Tensor>>>,
    t: u64,
}

impl Optimizer {
    pub fn new(algo: OptimAlgo, lr: f32) -> Self {
        Self { algo, lr, state: Vec::new(), t: 0 }
    }

    /// Applies one update. Layers switched off via
    /// [`Network::set_trainable`] keep both parameters and slots untouched.
    pub fn step(&mut self, net: &mut Network, grads: &NetGrads) -> Result<(), NnError> {
        if grads.len() != net.len() {
            return Err(NnError::ConfigError(format!(
                "gradient set covers {} layers, network has {}",
                grads.len(),
                net.len()
            )));
        }
        if self.state.is_empty() {
            self.state = grads
                .iter()
                .map(|layer| {
                    layer
                        .iter()
                        .map(|g| (0..self.algo.slots()).map(|_| ArrayD::zeros(g.raw_dim())).collect())
                        .collect()
                })
                .collect();
        }
        self.t += 1;
        let lr = self.lr;
        let trainable = net.trainable().to_vec();
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            if !trainable[li] {
                continue;
            }
            let params = layer.params_mut();
            if params.len() != grads[li].len() {
                return Err(NnError::ConfigError(format!(
                    "layer {li} has {} parameters but {} gradients",
                    params.len(),
                    grads[li].len()
                )));
            }
            for (pi, p) in params.into_iter().enumerate() {
                let g = &grads[li][pi];
                if g.shape() != p.shape() {
                    return Err(NnError::ShapeError(format!(
                        "gradient shape {:?} vs parameter {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
                let slots = &mut self.state[li][pi];
                match self.algo {
                    OptimAlgo::Sgd { momentum } => {
                        let v = &mut slots[0];
                        ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                            *v = momentum * *v - lr * g;
                        });
                        *p += &*v;
                    }
                    OptimAlgo::Adam { beta1, beta2, eps } => {
                        let bc1 = 1.0 - beta1.powi(self.t as i32);
                        let bc2 = 1.0 - beta2.powi(self.t as i32);
                        let (m, rest) = slots.split_first_mut().unwrap();
                        let v = &mut rest[0];
                        ndarray::Zip::from(&mut *m)
                            .and(&mut *v)
                            .and(g)
                            .and(&mut *p)
                            .for_each(|m, v, &g, p| {
                                *m = beta1 * *m + (1.0 - beta1) * g;
                                *v = beta2 * *v + (1.0 - beta2) * g * g;
                                let mh = *m / bc1;
                                let vh = *v / bc2;
                                *p -= lr * mh / (vh.sqrt() + eps);
                            });
                    }
                    OptimAlgo::Adagrad { eps } => {
                        let a = &mut slots[0];
                        ndarray::Zip::from(&mut *a).and(g).and(&mut *p).for_each(|a, &g, p| {
                            *a += g * g;
                            *p -= lr * g / (a.sqrt() + eps);
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::Layer;
    use ndarray::{arr1, arr2};

    fn one_param_net(w: f32) -> Network {
        Network::new(vec![Layer::Dense {
            w: arr2(&[[w]]).into_dyn(),
            b: arr1(&[0.0]).into_dyn(),
        }])
    }

    fn grad(g: f32) -> NetGrads {
        vec![vec![arr2(&[[g]]).into_dyn(), arr1(&[0.0]).into_dyn()]]
    }

    fn weight(net: &Network) -> f32 {
        match &net.layers()[0] {
            Layer::Dense { w, .. } => w[[0, 0]],
            _ => unreachable!(),
        }
    }

    #[test]
    fn sgd_plain_step() {
        let mut net = one_param_net(1.0);
        let mut opt = Optimizer::new(OptimAlgo::sgd(0.0), 0.1);
        opt.step(&mut net, &grad(2.0)).unwrap();
        assert!((weight(&net) - 0.8).abs() < 1e-6);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut net = one_param_net(0.0);
        let mut opt = Optimizer::new(OptimAlgo::sgd(0.9), 0.1);
        opt.step(&mut net, &grad(1.0)).unwrap();
        opt.step(&mut net, &grad(1.0)).unwrap();
        // v1 = -0.1, v2 = -0.19; w = -0.29
        assert!((weight(&net) + 0.29).abs() < 1e-6);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut net = one_param_net(0.0);
        let mut opt = Optimizer::new(OptimAlgo::adam(), 0.001);
        opt.step(&mut net, &grad(3.0)).unwrap();
        // Bias correction makes the first update almost exactly lr.
        assert!((weight(&net) + 0.001).abs() < 1e-6);
    }

    #[test]
    fn adagrad_shrinks_effective_rate() {
        let mut net = one_param_net(0.0);
        let mut opt = Optimizer::new(OptimAlgo::adagrad(), 0.1);
        opt.step(&mut net, &grad(1.0)).unwrap();
        let first = weight(&net);
        opt.step(&mut net, &grad(1.0)).unwrap();
        let second = weight(&net) - first;
        assert!((first + 0.1).abs() < 1e-3);
        assert!(second.abs() < first.abs());
    }

    #[test]
    fn frozen_layer_untouched() {
        let mut net = one_param_net(1.0);
        net.set_trainable(0, false);
        let mut opt = Optimizer::new(OptimAlgo::sgd(0.0), 0.5);
        opt.step(&mut net, &grad(1.0)).unwrap();
        assert_eq!(weight(&net), 1.0);
    }
}
