//! Named parameter storage and the small set of layers the backbones use.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::tensor::{Scalar, TensorBuf};

/// Ordered, named parameter tensors. Order is part of the checkpoint format.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore<F: Scalar> {
    names: Vec<String>,
    tensors: Vec<TensorBuf<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: TensorBuf<F>) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, id: usize) -> &TensorBuf<F> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut TensorBuf<F> {
        &mut self.tensors[id]
    }

    pub fn tensors(&self) -> &[TensorBuf<F>] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorBuf<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(TensorBuf::len).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(TensorBuf::cast).collect(),
        }
    }

    /// All parameters flattened in store order.
    pub fn flatten(&self) -> Vec<F> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// Uniform in `±1/√fan_in`.
fn fan_in_uniform<F: Scalar>(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize) -> TensorBuf<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    TensorBuf::from_fn(shape, |_| F::of(rng.random_range(-bound..bound)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    FanIn,
    Zero,
}

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
    ) -> Self {
        let (w, b) = match init {
            Init::FanIn => (
                fan_in_uniform(rng, vec![fan_in, fan_out], fan_in),
                fan_in_uniform(rng, vec![fan_out], fan_in),
            ),
            Init::Zero => (
                TensorBuf::zeros(vec![fan_in, fan_out]),
                TensorBuf::zeros(vec![fan_out]),
            ),
        };
        Self {
            weight: store.push(format!("{name}.weight"), w),
            bias: store.push(format!("{name}.bias"), b),
            fan_in,
            fan_out,
        }
    }

    pub fn param_count(fan_in: usize, fan_out: usize) -> usize {
        fan_in * fan_out + fan_out
    }

    pub fn forward<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        init: Init,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let shape = vec![c_out, c_in, kernel, kernel];
        let (w, b) = match init {
            Init::FanIn => (
                fan_in_uniform(rng, shape, fan_in),
                fan_in_uniform(rng, vec![c_out], fan_in),
            ),
            Init::Zero => (TensorBuf::zeros(shape), TensorBuf::zeros(vec![c_out])),
        };
        Self {
            weight: store.push(format!("{name}.weight"), w),
            bias: store.push(format!("{name}.bias"), b),
            c_in,
            c_out,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn param_count(c_in: usize, c_out: usize, kernel: usize) -> usize {
        c_out * c_in * kernel * kernel + c_out
    }

    pub fn forward<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GroupNorm {
    pub gamma: usize,
    pub beta: usize,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, channels: usize, groups: usize) -> Self {
        Self {
            gamma: store.push(format!("{name}.gamma"), TensorBuf::full(vec![channels], F::one())),
            beta: store.push(format!("{name}.beta"), TensorBuf::zeros(vec![channels])),
            groups,
        }
    }

    pub fn param_count(channels: usize) -> usize {
        2 * channels
    }

    pub fn forward<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.group_norm(x, gamma, beta, self.groups)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn param_counts_match_allocations() {
        let mut store = ParamStore::<f32>::new();
        let mut r = rng::stream(0, 0);
        Linear::new(&mut store, &mut r, "l", 7, 5, Init::FanIn);
        assert_eq!(store.numel(), Linear::param_count(7, 5));
        let before = store.numel();
        Conv2d::new(&mut store, &mut r, "c", 3, 4, 3, 1, Init::FanIn);
        assert_eq!(store.numel() - before, Conv2d::param_count(3, 4, 3));
    }

    #[test]
    fn zero_init_is_zero() {
        let mut store = ParamStore::<f32>::new();
        let mut r = rng::stream(0, 0);
        Linear::new(&mut store, &mut r, "out", 4, 2, Init::Zero);
        assert!(store.flatten().iter().all(|&v| v == 0.0));
    }
}
