use serde::{Deserialize, Serialize};

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, TensorBuf};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// Adam with bias correction.
pub struct Adam<F: Scalar> {
    cfg: AdamConfig,
    m: Vec<TensorBuf<F>>,
    v: Vec<TensorBuf<F>>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(cfg: AdamConfig, params: &ParamStore<F>) -> Result<Self> {
        if cfg.lr.is_nan() || cfg.lr <= 0.0 {
            return Err(Error::config(format!("learning rate must be > 0, got {}", cfg.lr)));
        }
        let zeros = |p: &ParamStore<F>| {
            p.tensors()
                .iter()
                .map(|t| TensorBuf::zeros(t.shape().to_vec()))
                .collect()
        };
        Ok(Self {
            cfg,
            m: zeros(params),
            v: zeros(params),
            t: 0,
        })
    }

    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>) {
        self.t += 1;
        let clip = match self.cfg.clip_norm {
            Some(max) => {
                let n = grads.norm();
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let step = F::of(self.cfg.lr * bc2.sqrt() / bc1);
        let eps = F::of(self.cfg.eps * bc2.sqrt());
        let (b1f, b2f) = (F::of(b1), F::of(b2));
        let clip = F::of(clip);
        for id in 0..params.len() {
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            let p = params.tensor_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i] * clip;
                m[i] = b1f * m[i] + (F::one() - b1f) * gi;
                v[i] = b2f * v[i] + (F::one() - b2f) * gi * gi;
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.push("x", TensorBuf::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
            &store,
        )
        .unwrap();
        for _ in 0..2000 {
            let grads = {
                let mut g = Graph::new();
                let x = g.param(&store, id);
                let l = g.sum_squares(x);
                g.backward(l, store.len()).unwrap()
            };
            opt.step(&mut store, &grads);
        }
        assert!(store.tensor(id).norm_f64() < 1e-3);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let store = ParamStore::<f32>::new();
        let cfg = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(Adam::new(cfg, &store).is_err());
    }
}
