//! The shared time-conditioned network `f(x, t)`.
//!
//! Both paradigms use the same network: diffusion reads its output as the
//! predicted noise, flow reads it as a velocity.

pub mod checkpoint;
pub mod embedding;
pub mod mlp;
pub mod unet;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Conv2d, GroupNorm, Linear, ParamStore};
use crate::rng::{purpose, StreamRng};
use crate::tensor::{Scalar, TensorBuf};

pub use checkpoint::{load, save, Checkpoint, TrainMeta};
pub use embedding::{embed_batch, sinusoidal_embedding, TIME_SCALE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Diffusion,
    Flow,
}

impl Paradigm {
    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Diffusion => "diffusion",
            Paradigm::Flow => "flow",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" | "ddpm" => Ok(Paradigm::Diffusion),
            "flow" | "rectified_flow" => Ok(Paradigm::Flow),
            other => Err(Error::config(format!("unknown paradigm `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    PaperUnet,
    TinyUnet,
    ToyMlp,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::PaperUnet => "paper_unet",
            Preset::TinyUnet => "tiny_unet",
            Preset::ToyMlp => "toy_mlp",
        }
    }

    pub fn is_unet(self) -> bool {
        !matches!(self, Preset::ToyMlp)
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_unet" => Ok(Preset::PaperUnet),
            "tiny_unet" => Ok(Preset::TinyUnet),
            "toy_mlp" => Ok(Preset::ToyMlp),
            other => Err(Error::config(format!(
                "unknown preset `{other}` (expected paper_unet, tiny_unet or toy_mlp)"
            ))),
        }
    }
}

/// Architecture settings. For `toy_mlp`, `channel_multipliers` lists the
/// hidden width of each residual block (all equal) and `in_shape` is `[dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub preset: Preset,
    pub in_shape: Vec<usize>,
    pub channel_multipliers: Vec<usize>,
    pub attention_resolutions: Vec<usize>,
    pub time_embed_dim: usize,
    pub time_hidden: usize,
    pub groups: usize,
    pub seed: u64,
}

impl BackboneConfig {
    pub fn paper_unet() -> Self {
        Self {
            preset: Preset::PaperUnet,
            in_shape: vec![1, 32, 32],
            channel_multipliers: vec![64, 128, 256],
            attention_resolutions: vec![16],
            time_embed_dim: 128,
            time_hidden: 256,
            groups: 8,
            seed: 0,
        }
    }

    pub fn tiny_unet() -> Self {
        Self {
            preset: Preset::TinyUnet,
            in_shape: vec![1, 32, 32],
            channel_multipliers: vec![16, 32, 64],
            attention_resolutions: vec![16],
            time_embed_dim: 32,
            time_hidden: 64,
            groups: 8,
            seed: 0,
        }
    }

    pub fn toy_mlp() -> Self {
        Self {
            preset: Preset::ToyMlp,
            in_shape: vec![2],
            channel_multipliers: vec![128, 128, 128],
            attention_resolutions: vec![],
            time_embed_dim: 32,
            time_hidden: 64,
            groups: 1,
            seed: 0,
        }
    }

    pub fn from_preset(preset: Preset) -> Self {
        match preset {
            Preset::PaperUnet => Self::paper_unet(),
            Preset::TinyUnet => Self::tiny_unet(),
            Preset::ToyMlp => Self::toy_mlp(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Per-item shape with a leading batch dimension.
    pub fn batch_shape(&self, batch: usize) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.in_shape.len() + 1);
        s.push(batch);
        s.extend_from_slice(&self.in_shape);
        s
    }

    pub fn item_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(format!("{}: {msg}", self.preset.name())));
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return bad(format!("time_embed_dim must be even and positive, got {}", self.time_embed_dim));
        }
        if self.time_hidden == 0 {
            return bad("time_hidden must be positive".into());
        }
        if self.channel_multipliers.is_empty() || self.channel_multipliers.contains(&0) {
            return bad("channel list must be non-empty and positive".into());
        }
        if self.preset == Preset::ToyMlp {
            if self.in_shape.len() != 1 || self.in_shape[0] == 0 {
                return bad(format!("expects a vector input shape, got {:?}", self.in_shape));
            }
            if !self.attention_resolutions.is_empty() {
                return bad("has no spatial axes for attention".into());
            }
            if self.channel_multipliers.iter().any(|&c| c != self.channel_multipliers[0]) {
                return bad("residual blocks need a single hidden width".into());
            }
            return Ok(());
        }
        if self.in_shape.len() != 3 || self.in_shape.contains(&0) {
            return bad(format!("expects a [channels, height, width] input shape, got {:?}", self.in_shape));
        }
        let (h, w) = (self.in_shape[1], self.in_shape[2]);
        if h != w {
            return bad(format!("needs a square input, got {h}x{w}"));
        }
        let levels = self.channel_multipliers.len();
        if h % (1 << (levels - 1)) != 0 {
            return bad(format!("input side {h} is not divisible by 2^{}", levels - 1));
        }
        if self.groups == 0 || self.channel_multipliers.iter().any(|c| c % self.groups != 0) {
            return bad(format!(
                "channels {:?} must be divisible by {} groups",
                self.channel_multipliers, self.groups
            ));
        }
        let resolutions: Vec<usize> = (0..levels).map(|l| h >> l).collect();
        if let Some(r) = self.attention_resolutions.iter().find(|r| !resolutions.contains(r)) {
            return bad(format!("attention resolution {r} is not one of {resolutions:?}"));
        }
        Ok(())
    }

    /// Parameter count from the layer list, without building the model.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.cost()?.params)
    }

    /// Multiply-accumulates of one forward pass for a single item.
    pub fn macs_per_forward(&self) -> Result<u64> {
        Ok(self.cost()?.macs)
    }

    fn cost(&self) -> Result<Cost> {
        self.validate()?;
        let mut c = Cost::default();
        c.linear(self.time_embed_dim, self.time_hidden, 1);
        c.linear(self.time_hidden, self.time_hidden, 1);
        if self.preset == Preset::ToyMlp {
            let (dim, width) = (self.in_shape[0], self.channel_multipliers[0]);
            c.linear(dim, width, 1);
            for _ in &self.channel_multipliers {
                c.linear(width, width, 1);
                c.linear(self.time_hidden, width, 1);
                c.linear(width, width, 1);
            }
            c.linear(width, dim, 1);
            return Ok(c);
        }
        let ch = &self.channel_multipliers;
        let side = self.in_shape[1];
        let img = self.in_shape[0];
        let attn = |l: usize| self.attention_resolutions.contains(&(side >> l));
        c.conv(img, ch[0], 3, 1, side);
        let mut prev = ch[0];
        for (l, &w) in ch.iter().enumerate() {
            c.res_block(prev, w, self.time_hidden, side >> l);
            if attn(l) {
                c.attention(w, side >> l);
            }
            prev = w;
            if l + 1 < ch.len() {
                c.conv(w, w, 3, 2, side >> l);
            }
        }
        for (l, &w) in ch.iter().enumerate().rev() {
            c.res_block(prev + w, w, self.time_hidden, side >> l);
            if attn(l) {
                c.attention(w, side >> l);
            }
            prev = w;
            if l > 0 {
                c.conv(w, ch[l - 1], 3, 1, side >> (l - 1));
                prev = ch[l - 1];
            }
        }
        c.params += GroupNorm::param_count(ch[0]);
        c.conv(ch[0], img, 3, 1, side);
        Ok(c)
    }
}

#[derive(Default)]
struct Cost {
    params: usize,
    macs: u64,
}

impl Cost {
    fn linear(&mut self, fan_in: usize, fan_out: usize, rows: usize) {
        self.params += Linear::param_count(fan_in, fan_out);
        self.macs += (rows * fan_in * fan_out) as u64;
    }

    fn conv(&mut self, c_in: usize, c_out: usize, kernel: usize, stride: usize, side: usize) {
        self.params += Conv2d::param_count(c_in, c_out, kernel);
        let geom = ConvGeom {
            c_in,
            c_out,
            h: side,
            w: side,
            kernel,
            stride,
            pad: kernel / 2,
        };
        self.macs += geom.macs();
    }

    fn res_block(&mut self, c_in: usize, c_out: usize, time_dim: usize, side: usize) {
        self.params += GroupNorm::param_count(c_in) + GroupNorm::param_count(c_out);
        self.conv(c_in, c_out, 3, 1, side);
        self.linear(time_dim, c_out, 1);
        self.conv(c_out, c_out, 3, 1, side);
        if c_in != c_out {
            self.conv(c_in, c_out, 1, 1, side);
        }
    }

    fn attention(&mut self, c: usize, side: usize) {
        let tokens = side * side;
        self.params += GroupNorm::param_count(c);
        for _ in 0..4 {
            self.linear(c, c, tokens);
        }
        self.macs += (2 * tokens * tokens * c) as u64;
    }
}

#[derive(Clone, Debug)]
enum Net {
    Unet(unet::UNet),
    Mlp(mlp::ToyMlp),
}

/// A built backbone: configuration, parameters and the layer wiring.
#[derive(Clone, Debug)]
pub struct Model<F: Scalar = f32> {
    config: BackboneConfig,
    params: ParamStore<F>,
    net: Net,
}

impl<F: Scalar> Model<F> {
    /// Builds the network with parameters initialized from `config.seed`.
    pub fn build(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng::stream(config.seed, purpose::INIT);
        Ok(Self::build_with(config, &mut rng))
    }

    fn build_with(config: &BackboneConfig, rng: &mut StreamRng) -> Self {
        let mut params = ParamStore::new();
        let net = match config.preset {
            Preset::ToyMlp => Net::Mlp(mlp::ToyMlp::build(config, &mut params, rng)),
            _ => Net::Unet(unet::UNet::build(config, &mut params, rng)),
        };
        Self {
            config: config.clone(),
            params,
            net,
        }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Parameter ids of the final (zero-initialized) layer: weight, bias.
    pub fn output_param_ids(&self) -> [usize; 2] {
        match &self.net {
            Net::Unet(u) => {
                let l = u.output_layer();
                [l.weight, l.bias]
            }
            Net::Mlp(m) => {
                let l = m.output_layer();
                [l.weight, l.bias]
            }
        }
    }

    /// Same wiring, parameters converted to another precision.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            net: self.net.clone(),
        }
    }

    /// Replaces all parameters; names and shapes must match the built layout.
    pub fn set_params(&mut self, params: ParamStore<F>) -> Result<()> {
        if params.names() != self.params.names() {
            return Err(Error::Consistency("parameter names differ from the model layout".into()));
        }
        for (a, b) in params.tensors().iter().zip(self.params.tensors()) {
            a.ensure_shape(b.shape())?;
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, x: &TensorBuf<F>) -> Result<usize> {
        let s = x.shape();
        if s.len() != self.config.in_shape.len() + 1 || s[1..] != self.config.in_shape[..] {
            return Err(Error::shape(&self.config.batch_shape(s.first().copied().unwrap_or(0)), s));
        }
        if x.has_nan() {
            return Err(Error::domain("NaN in backbone input"));
        }
        Ok(s[0])
    }

    /// Adds the network to `g`; `t` is one time per batch item or a single shared time.
    pub fn forward_graph<'p>(&'p self, g: &mut Graph<'p, F>, x: Var, t: &[f64]) -> Result<Var> {
        self.forward_graph_with(&self.params, g, x, t)
    }

    /// As [`Model::forward_graph`] but reading parameters from `params`,
    /// which must have this model's layout.
    pub fn forward_graph_with<'p>(
        &self,
        params: &'p ParamStore<F>,
        g: &mut Graph<'p, F>,
        x: Var,
        t: &[f64],
    ) -> Result<Var> {
        let batch = g.shape(x)[0];
        let temb = embed_batch::<F>(t, batch, self.config.time_embed_dim)?;
        let temb = g.input(temb);
        match &self.net {
            Net::Unet(u) => u.forward(g, params, x, temb),
            Net::Mlp(m) => m.forward(g, params, x, temb),
        }
    }

    /// Inference forward pass; the output has the input's shape.
    pub fn forward(&self, x: &TensorBuf<F>, t: &[f64]) -> Result<TensorBuf<F>> {
        self.forward_counted(x, t).map(|(y, _)| y)
    }

    /// Forward pass that also reports the multiply-accumulates performed.
    pub fn forward_counted(&self, x: &TensorBuf<F>, t: &[f64]) -> Result<(TensorBuf<F>, u64)> {
        self.check_input(x)?;
        let mut g = Graph::inference();
        let xv = g.input_ref(x);
        let y = self.forward_graph(&mut g, xv, t)?;
        let macs = g.macs();
        Ok((g.into_value(y), macs))
    }
}

/// Anything that maps `(x, t)` to a tensor of the same shape inside a graph.
/// Implemented by [`Model`]; test doubles wrap a plain function.
pub trait Network<F: Scalar> {
    fn forward_node<'p>(&'p self, g: &mut Graph<'p, F>, x: Var, t: &[f64]) -> Result<Var>;

    /// Parameters that receive gradients, if any.
    fn param_store(&self) -> Option<&ParamStore<F>> {
        None
    }
}

impl<F: Scalar> Network<F> for Model<F> {
    fn forward_node<'p>(&'p self, g: &mut Graph<'p, F>, x: Var, t: &[f64]) -> Result<Var> {
        self.forward_graph(g, x, t)
    }

    fn param_store(&self) -> Option<&ParamStore<F>> {
        Some(&self.params)
    }
}

/// A parameter-free network given by a function of the input values.
pub struct Stub<T>(pub T);

impl<F: Scalar, T> Network<F> for Stub<T>
where
    T: Fn(&TensorBuf<F>, &[f64]) -> TensorBuf<F>,
{
    fn forward_node<'p>(&'p self, g: &mut Graph<'p, F>, x: Var, t: &[f64]) -> Result<Var> {
        let y = (self.0)(g.value(x), t);
        y.ensure_shape(g.shape(x))?;
        Ok(g.input(y))
    }
}

/// Fails with a comparison error unless both models share an architecture.
pub fn assert_same_architecture<F: Scalar, G: Scalar>(a: &Model<F>, b: &Model<G>) -> Result<()> {
    let strip = |c: &BackboneConfig| BackboneConfig { seed: 0, ..c.clone() };
    if strip(a.config()) != strip(b.config()) || a.param_count() != b.param_count() {
        return Err(Error::ComparisonInvalid(format!(
            "backbones differ: {} ({} params) vs {} ({} params)",
            a.config().preset.name(),
            a.param_count(),
            b.config().preset.name(),
            b.param_count()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_per_item;

    fn tiny_input(batch: usize, seed: u64) -> TensorBuf<f32> {
        normal_per_item(seed, 0, &[batch, 1, 32, 32])
    }

    #[test]
    fn paper_unet_is_near_four_and_a_half_million() {
        let cfg = BackboneConfig::paper_unet();
        let n = cfg.param_count().unwrap();
        assert!((n as f64 - 4.5e6).abs() <= 0.15 * 4.5e6, "{n}");
        let m = Model::<f32>::build(&cfg).unwrap();
        assert_eq!(m.param_count(), n);
    }

    #[test]
    fn tiny_unet_under_budget() {
        let cfg = BackboneConfig::tiny_unet();
        let n = cfg.param_count().unwrap();
        assert!(n < 300_000, "{n}");
        assert_eq!(Model::<f32>::build(&cfg).unwrap().param_count(), n);
    }

    #[test]
    fn toy_param_count_matches_build() {
        let cfg = BackboneConfig::toy_mlp();
        assert_eq!(Model::<f32>::build(&cfg).unwrap().param_count(), cfg.param_count().unwrap());
    }

    #[test]
    fn analytic_macs_match_graph_counter() {
        for cfg in [BackboneConfig::tiny_unet(), BackboneConfig::toy_mlp()] {
            let m = Model::<f32>::build(&cfg).unwrap();
            let x = TensorBuf::zeros(cfg.batch_shape(3));
            let (_, macs) = m.forward_counted(&x, &[0.5]).unwrap();
            assert_eq!(macs, 3 * cfg.macs_per_forward().unwrap(), "{:?}", cfg.preset);
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let m = Model::<f32>::build(&BackboneConfig::tiny_unet()).unwrap();
        let y = m.forward(&tiny_input(4, 1), &[0.3]).unwrap();
        assert_eq!(y.shape(), &[4, 1, 32, 32]);
        let toy = Model::<f32>::build(&BackboneConfig::toy_mlp()).unwrap();
        let y = toy.forward(&TensorBuf::zeros(vec![7, 2]), &[0.3]).unwrap();
        assert_eq!(y.shape(), &[7, 2]);
    }

    #[test]
    fn rejects_bad_shapes_and_nan() {
        let m = Model::<f32>::build(&BackboneConfig::toy_mlp()).unwrap();
        assert!(matches!(
            m.forward(&TensorBuf::zeros(vec![3, 3]), &[0.1]),
            Err(Error::Shape { .. })
        ));
        let mut x = TensorBuf::zeros(vec![2, 2]);
        x.data_mut()[1] = f32::NAN;
        assert!(matches!(m.forward(&x, &[0.1]), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        let mut c = BackboneConfig::tiny_unet();
        c.attention_resolutions = vec![12];
        assert!(c.validate().unwrap_err().is_config());
        let mut c = BackboneConfig::tiny_unet();
        c.in_shape = vec![2];
        assert!(Model::<f32>::build(&c).unwrap_err().is_config());
        let mut c = BackboneConfig::toy_mlp();
        c.in_shape = vec![1, 32, 32];
        assert!(c.validate().unwrap_err().is_config());
        let mut c = BackboneConfig::toy_mlp();
        c.time_embed_dim = 31;
        assert!(c.validate().unwrap_err().is_config());
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = BackboneConfig::tiny_unet().with_seed(9);
        let a = Model::<f32>::build(&cfg).unwrap();
        let b = Model::<f32>::build(&cfg).unwrap();
        let bits = |m: &Model<f32>| m.params().flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = Model::<f32>::build(&cfg.clone().with_seed(10)).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    fn randomize_output(m: &mut Model<f32>, seed: u64) {
        for id in m.output_param_ids() {
            let shape = m.params().tensor(id).shape().to_vec();
            *m.params_mut().tensor_mut(id) = normal_per_item::<f32>(seed, id as u64, &shape).scale(0.1);
        }
    }

    #[test]
    fn no_cross_batch_leakage() {
        let mut m = Model::<f32>::build(&BackboneConfig::tiny_unet()).unwrap();
        randomize_output(&mut m, 3);
        let x = tiny_input(2, 5);
        let t = [0.2, 0.7];
        let single = m.forward(&x, &t).unwrap();
        let doubled = m
            .forward(&TensorBuf::concat_batch(&[&x, &x]).unwrap(), &[0.2, 0.7, 0.2, 0.7])
            .unwrap();
        let first = doubled.slice_batch(0, 2);
        let second = doubled.slice_batch(2, 4);
        assert!(first.max_abs_diff(&single) <= 1e-5);
        assert!(second.max_abs_diff(&single) <= 1e-5);
    }

    #[test]
    fn time_conditioning_is_live() {
        let mut m = Model::<f32>::build(&BackboneConfig::tiny_unet()).unwrap();
        randomize_output(&mut m, 4);
        let x = tiny_input(1, 6);
        let a = m.forward(&x, &[0.1]).unwrap();
        let b = m.forward(&x, &[0.9]).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-4);
    }

    #[test]
    fn initial_model_predicts_zero() {
        let m = Model::<f32>::build(&BackboneConfig::toy_mlp()).unwrap();
        let y = m.forward(&normal_per_item(1, 0, &[5, 2]), &[0.4]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        // Identity projections, normalization skipped: permuting the spatial
        // positions of the input permutes the output the same way.
        let c = 8;
        let (b, side) = (1, 4);
        let mut store = ParamStore::<f64>::new();
        let mut rng = crate::rng::stream(1, 0);
        let block = unet::AttentionBlock::build(&mut store, &mut rng, "attn", c, 1);
        for id in 0..store.len() {
            let name = store.name(id).to_string();
            let t = store.tensor_mut(id);
            if name.ends_with(".weight") {
                *t = TensorBuf::from_fn(t.shape().to_vec(), |i| if i / c == i % c { 1.0 } else { 0.0 });
            } else if name.ends_with(".bias") {
                *t = TensorBuf::zeros(t.shape().to_vec());
            }
        }
        let x: TensorBuf<f64> = normal_per_item(2, 0, &[b, c, side, side]);
        let n = side * side;
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        let permute = |t: &TensorBuf<f64>| {
            TensorBuf::from_fn(t.shape().to_vec(), |i| {
                let (ch, p) = (i / n, i % n);
                t.data()[ch * n + perm[p]]
            })
        };
        let run = |x: &TensorBuf<f64>| {
            let mut g = Graph::inference();
            let v = g.input(x.clone());
            let y = block.attend(&mut g, &store, v, b, c, side, side).unwrap();
            g.into_value(y)
        };
        let lhs = run(&permute(&x));
        let rhs = permute(&run(&x));
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        // Not trivially the identity map.
        assert!(run(&x).max_abs_diff(&x) > 1e-3);
    }
}
