//! Time-conditioned U-Net.
//!
//! One residual block per resolution level on each side, a stride-2 conv
//! between encoder levels, nearest-neighbour upsampling plus a conv that
//! narrows to the next level's width between decoder levels, skip connections by channel concatenation, and single-head
//! self-attention after the residual block at the configured resolutions.

use rand::Rng;

use super::BackboneConfig;
use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::nn::{Conv2d, GroupNorm, Init, Linear, ParamStore};
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn build<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        time_dim: usize,
        groups: usize,
    ) -> Self {
        Self {
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), c_in, groups),
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), c_in, c_out, 3, 1, Init::FanIn),
            time: Linear::new(store, rng, &format!("{name}.time"), time_dim, c_out, Init::FanIn),
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), c_out, groups),
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), c_out, c_out, 3, 1, Init::FanIn),
            skip: (c_in != c_out)
                .then(|| Conv2d::new(store, rng, &format!("{name}.skip"), c_in, c_out, 1, 1, Init::FanIn)),
        }
    }

    fn forward<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        x: Var,
        temb: Var,
    ) -> Result<Var> {
        let h = self.norm1.forward(g, store, x)?;
        let h = g.silu(h);
        let h = self.conv1.forward(g, store, h)?;
        let te = self.time.forward(g, store, temb)?;
        let h = g.add_channel(h, te)?;
        let h = self.norm2.forward(g, store, h)?;
        let h = g.silu(h);
        let h = self.conv2.forward(g, store, h)?;
        let shortcut = match &self.skip {
            Some(c) => c.forward(g, store, x)?,
            None => x,
        };
        g.add(shortcut, h)
    }
}

#[derive(Clone, Debug)]
pub struct AttentionBlock {
    norm: GroupNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
}

impl AttentionBlock {
    pub fn build<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        groups: usize,
    ) -> Self {
        Self {
            norm: GroupNorm::new(store, &format!("{name}.norm"), channels, groups),
            q: Linear::new(store, rng, &format!("{name}.q"), channels, channels, Init::FanIn),
            k: Linear::new(store, rng, &format!("{name}.k"), channels, channels, Init::FanIn),
            v: Linear::new(store, rng, &format!("{name}.v"), channels, channels, Init::FanIn),
            proj: Linear::new(store, rng, &format!("{name}.proj"), channels, channels, Init::FanIn),
        }
    }

    /// Residual attention over the spatial positions of `[b, c, h, w]`.
    pub fn forward<'p, F: Scalar>(&self, g: &mut Graph<'p, F>, store: &'p ParamStore<F>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, c, hh, ww) = (s[0], s[1], s[2], s[3]);
        let h = self.norm.forward(g, store, x)?;
        self.attend(g, store, h, b, c, hh, ww)
            .and_then(|a| g.add(x, a))
    }

    /// Attention without normalization or residual; `h` is `[b, c, hh, ww]`.
    #[allow(clippy::too_many_arguments)]
    pub fn attend<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        h: Var,
        b: usize,
        c: usize,
        hh: usize,
        ww: usize,
    ) -> Result<Var> {
        let tokens = g.to_tokens(h);
        let flat = g.reshape(tokens, vec![b * hh * ww, c])?;
        let project = |g: &mut Graph<'p, F>, l: &Linear| -> Result<Var> {
            let y = l.forward(g, store, flat)?;
            g.reshape(y, vec![b, hh * ww, c])
        };
        let q = project(g, &self.q)?;
        let k = project(g, &self.k)?;
        let v = project(g, &self.v)?;
        let a = g.attention(q, k, v)?;
        let a = g.reshape(a, vec![b * hh * ww, c])?;
        let a = self.proj.forward(g, store, a)?;
        let a = g.reshape(a, vec![b, hh * ww, c])?;
        g.from_tokens(a, hh, ww)
    }
}

#[derive(Clone, Debug)]
struct Level {
    res: ResBlock,
    attn: Option<AttentionBlock>,
}

#[derive(Clone, Debug)]
pub struct UNet {
    time_in: Linear,
    time_out: Linear,
    conv_in: Conv2d,
    down: Vec<Level>,
    downsample: Vec<Conv2d>,
    up: Vec<Level>,
    upsample: Vec<Conv2d>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl UNet {
    pub fn build<F: Scalar>(cfg: &BackboneConfig, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Self {
        let ch = &cfg.channel_multipliers;
        let c_img = cfg.in_shape[0];
        let side = cfg.in_shape[1];
        let groups = cfg.groups;
        let td = cfg.time_hidden;
        let attn_at = |level: usize| cfg.attention_resolutions.contains(&(side >> level));

        let time_in = Linear::new(store, rng, "time.0", cfg.time_embed_dim, td, Init::FanIn);
        let time_out = Linear::new(store, rng, "time.1", td, td, Init::FanIn);
        let conv_in = Conv2d::new(store, rng, "conv_in", c_img, ch[0], 3, 1, Init::FanIn);

        let mut down = Vec::new();
        let mut downsample = Vec::new();
        let mut prev = ch[0];
        for (i, &c) in ch.iter().enumerate() {
            down.push(Level {
                res: ResBlock::build(store, rng, &format!("down{i}.res"), prev, c, td, groups),
                attn: attn_at(i).then(|| AttentionBlock::build(store, rng, &format!("down{i}.attn"), c, groups)),
            });
            prev = c;
            if i + 1 < ch.len() {
                downsample.push(Conv2d::new(store, rng, &format!("down{i}.sample"), c, c, 3, 2, Init::FanIn));
            }
        }

        let mut up = Vec::new();
        let mut upsample = Vec::new();
        for (i, &c) in ch.iter().enumerate().rev() {
            up.push(Level {
                res: ResBlock::build(store, rng, &format!("up{i}.res"), prev + c, c, td, groups),
                attn: attn_at(i).then(|| AttentionBlock::build(store, rng, &format!("up{i}.attn"), c, groups)),
            });
            prev = c;
            if i > 0 {
                let next = ch[i - 1];
                upsample.push(Conv2d::new(store, rng, &format!("up{i}.sample"), c, next, 3, 1, Init::FanIn));
                prev = next;
            }
        }
        let norm_out = GroupNorm::new(store, "norm_out", ch[0], groups);
        let conv_out = Conv2d::new(store, rng, "conv_out", ch[0], c_img, 3, 1, Init::Zero);
        Self {
            time_in,
            time_out,
            conv_in,
            down,
            downsample,
            up,
            upsample,
            norm_out,
            conv_out,
        }
    }

    pub fn output_layer(&self) -> Conv2d {
        self.conv_out
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

        let mut h = self.conv_in.forward(g, store, x)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for (i, level) in self.down.iter().enumerate() {
            h = level.res.forward(g, store, h, e)?;
            if let Some(a) = &level.attn {
                h = a.forward(g, store, h)?;
            }
            skips.push(h);
            if let Some(ds) = self.downsample.get(i) {
                h = ds.forward(g, store, h)?;
            }
        }
        for (j, level) in self.up.iter().enumerate() {
            let skip = skips.pop().expect("one skip per level");
            let cat = g.concat_channels(h, skip)?;
            h = level.res.forward(g, store, cat, e)?;
            if let Some(a) = &level.attn {
                h = a.forward(g, store, h)?;
            }
            if let Some(us) = self.upsample.get(j) {
                let u = g.upsample2x(h);
                h = us.forward(g, store, u)?;
            }
        }
        let h = self.norm_out.forward(g, store, h)?;
        let h = g.silu(h);
        self.conv_out.forward(g, store, h)
    }
}
