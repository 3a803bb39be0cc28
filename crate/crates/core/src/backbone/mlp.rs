//! Residual MLP for 2D toy data, conditioned on time the same way as the U-Net.

use rand::Rng;

use super::BackboneConfig;
use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::nn::{Init, Linear, ParamStore};
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
struct Block {
    fc1: Linear,
    time: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct ToyMlp {
    time_in: Linear,
    time_out: Linear,
    input: Linear,
    blocks: Vec<Block>,
    output: Linear,
}

impl ToyMlp {
    pub fn build<F: Scalar>(cfg: &BackboneConfig, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Self {
        let width = cfg.channel_multipliers[0];
        let dim = cfg.in_shape[0];
        let time_in = Linear::new(store, rng, "time.0", cfg.time_embed_dim, cfg.time_hidden, Init::FanIn);
        let time_out = Linear::new(store, rng, "time.1", cfg.time_hidden, cfg.time_hidden, Init::FanIn);
        let input = Linear::new(store, rng, "input", dim, width, Init::FanIn);
        let blocks = (0..cfg.channel_multipliers.len())
            .map(|i| Block {
                fc1: Linear::new(store, rng, &format!("block{i}.fc1"), width, width, Init::FanIn),
                time: Linear::new(store, rng, &format!("block{i}.time"), cfg.time_hidden, width, Init::FanIn),
                fc2: Linear::new(store, rng, &format!("block{i}.fc2"), width, width, Init::FanIn),
            })
            .collect();
        let output = Linear::new(store, rng, "output", width, dim, Init::Zero);
        Self {
            time_in,
            time_out,
            input,
            blocks,
            output,
        }
    }

    pub fn output_layer(&self) -> Linear {
        self.output
    }

    pub fn forward<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        x: Var,
        temb: Var,
    ) -> Result<Var> {
        let e = self.time_in.forward(g, store, temb)?;
        let e = g.silu(e);
        let e = self.time_out.forward(g, store, e)?;
        let e = g.silu(e);
        let mut h = self.input.forward(g, store, x)?;
        for b in &self.blocks {
            let a = g.silu(h);
            let r = b.fc1.forward(g, store, a)?;
            let te = b.time.forward(g, store, e)?;
            let r = g.add(r, te)?;
            let r = g.silu(r);
            let r = b.fc2.forward(g, store, r)?;
            h = g.add(h, r)?;
        }
        let a = g.silu(h);
        self.output.forward(g, store, a)
    }
}
