//! Noise-prediction and velocity-regression objectives and the training loop.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::backbone::{self, BackboneConfig, Model, Network, Paradigm, TrainMeta};
use crate::data::{batch_iter_epoch, Dataset};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{self, fill_normal, purpose};
use crate::schedules::{diffusion_forward_batch, fm_interpolate_batch, fm_target_velocity, NoiseSchedule, ScheduleParams};
use crate::tensor::{Scalar, TensorBuf};

pub const DEFAULT_LEARNING_RATE: f64 = 2e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub backbone: BackboneConfig,
    /// Diffusion only; `None` means the default linear schedule.
    pub schedule: Option<ScheduleParams>,
    pub log_every: usize,
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn new(paradigm: Paradigm, backbone: BackboneConfig) -> Self {
        Self {
            paradigm,
            steps: 1000,
            batch_size: 128,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            backbone,
            schedule: None,
            log_every: 50,
            clip_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::config(format!("clip norm must be > 0, got {c}")));
            }
        }
        self.backbone.validate()?;
        if self.paradigm == Paradigm::Diffusion {
            self.schedule_params().build()?;
        }
        Ok(())
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        self.schedule.unwrap_or_default()
    }
}

/// The random quantities of one diffusion loss evaluation.
#[derive(Clone, Debug)]
pub struct DiffusionDraw<F: Scalar> {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub noise: TensorBuf<F>,
    pub x_t: TensorBuf<F>,
}

impl<F: Scalar> DiffusionDraw<F> {
    /// Per item: step `k` uniform in `1..=T`, then a standard normal `ε`.
    pub fn sample(x0: &TensorBuf<F>, sched: &NoiseSchedule, rng: &mut impl Rng) -> Result<Self> {
        check_finite(x0)?;
        let mut noise = TensorBuf::zeros(x0.shape().to_vec());
        let mut steps = Vec::with_capacity(x0.batch());
        for i in 0..x0.batch() {
            steps.push(rng.random_range(1..=sched.steps()));
            fill_normal(rng, noise.item_mut(i));
        }
        let x_t = diffusion_forward_batch(x0, &steps, &noise, sched)?;
        let times = steps.iter().map(|&k| sched.time_of(k)).collect();
        Ok(Self { steps, times, noise, x_t })
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            steps: perm.iter().map(|&i| self.steps[i]).collect(),
            times: perm.iter().map(|&i| self.times[i]).collect(),
            noise: self.noise.gather_batch(perm),
            x_t: self.x_t.gather_batch(perm),
        }
    }
}

/// The random quantities of one flow-matching loss evaluation.
#[derive(Clone, Debug)]
pub struct FlowDraw<F: Scalar> {
    pub times: Vec<f64>,
    pub noise: TensorBuf<F>,
    pub x_t: TensorBuf<F>,
    pub target: TensorBuf<F>,
}

impl<F: Scalar> FlowDraw<F> {
    /// Per item: `t` uniform in `[0, 1)`, then a standard normal `x₀`.
    pub fn sample(x1: &TensorBuf<F>, rng: &mut impl Rng) -> Result<Self> {
        check_finite(x1)?;
        let mut noise = TensorBuf::zeros(x1.shape().to_vec());
        let mut times = Vec::with_capacity(x1.batch());
        for i in 0..x1.batch() {
            times.push(rng.random::<f64>());
            fill_normal(rng, noise.item_mut(i));
        }
        let x_t = fm_interpolate_batch(&noise, x1, &times)?;
        let target = fm_target_velocity(&noise, x1)?;
        Ok(Self { times, noise, x_t, target })
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            times: perm.iter().map(|&i| self.times[i]).collect(),
            noise: self.noise.gather_batch(perm),
            x_t: self.x_t.gather_batch(perm),
            target: self.target.gather_batch(perm),
        }
    }
}

fn check_finite<F: Scalar>(batch: &TensorBuf<F>) -> Result<()> {
    if !batch.is_finite() {
        return Err(Error::domain("training batch contains non-finite values"));
    }
    Ok(())
}

/// Mean squared error between `ε` and the network's prediction at `x_k`.
pub fn diffusion_objective<'p, F: Scalar, N: Network<F>>(
    g: &mut Graph<'p, F>,
    net: &'p N,
    draw: &DiffusionDraw<F>,
) -> Result<Var> {
    let x = g.input(draw.x_t.clone());
    let pred = net.forward_node(g, x, &draw.times)?;
    g.mse(pred, draw.noise.clone())
}

/// Mean squared error between `x₁ − x₀` and the network's velocity at `x_t`.
pub fn flow_objective<'p, F: Scalar, N: Network<F>>(
    g: &mut Graph<'p, F>,
    net: &'p N,
    draw: &FlowDraw<F>,
) -> Result<Var> {
    let x = g.input(draw.x_t.clone());
    let pred = net.forward_node(g, x, &draw.times)?;
    g.mse(pred, draw.target.clone())
}

fn scalar_of<F: Scalar>(g: &Graph<'_, F>, v: Var) -> f64 {
    g.value(v).data()[0].as_f64()
}

/// Diffusion loss value for a fresh draw.
pub fn diffusion_loss<F: Scalar, N: Network<F>>(
    net: &N,
    x0: &TensorBuf<F>,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<f64> {
    let draw = DiffusionDraw::sample(x0, sched, rng)?;
    let mut g = Graph::inference();
    let l = diffusion_objective(&mut g, net, &draw)?;
    Ok(scalar_of(&g, l))
}

/// Flow-matching loss value for a fresh draw.
pub fn fm_loss<F: Scalar, N: Network<F>>(net: &N, x1: &TensorBuf<F>, rng: &mut impl Rng) -> Result<f64> {
    let draw = FlowDraw::sample(x1, rng)?;
    let mut g = Graph::inference();
    let l = flow_objective(&mut g, net, &draw)?;
    Ok(scalar_of(&g, l))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

/// A trained model with the metadata needed to write a checkpoint.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model<f32>,
    pub paradigm: Paradigm,
    pub meta: TrainMeta,
    /// Loss at every step.
    pub losses: Vec<f64>,
    /// Loss at logged steps.
    pub log: Vec<LossRecord>,
}

impl Trained {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        backbone::save(&self.model, self.paradigm, &self.meta, dir)
    }
}

pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("step,loss,wall_ms\n");
    for r in log {
        s.push_str(&format!("{},{},{:.3}\n", r.step, r.loss, r.wall_ms));
    }
    s
}

pub fn train<D: Dataset + ?Sized>(config: &TrainConfig, dataset: &D) -> Result<Trained> {
    train_observed(config, dataset, |_, _| Ok(()))
}

/// Training loop that calls `observe(step, model)` after every logged step.
pub fn train_observed<D: Dataset + ?Sized>(
    config: &TrainConfig,
    dataset: &D,
    mut observe: impl FnMut(usize, &Model<f32>) -> Result<()>,
) -> Result<Trained> {
    config.validate()?;
    if dataset.count() == 0 {
        return Err(Error::config("dataset is empty"));
    }
    let expected = dataset.samples().shape()[1..].to_vec();
    if expected != config.backbone.in_shape {
        return Err(Error::shape(&config.backbone.in_shape, &expected));
    }
    let sched = match config.paradigm {
        Paradigm::Diffusion => Some(config.schedule_params().build()?),
        Paradigm::Flow => None,
    };
    let mut model = Model::<f32>::build(&config.backbone)?;
    let mut opt = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            clip_norm: config.clip_norm,
            ..AdamConfig::default()
        },
        model.params(),
    )?;

    let start = Instant::now();
    let mut losses = Vec::with_capacity(config.steps);
    let mut log = Vec::new();
    let mut epoch = 0u64;
    let mut batches = batch_iter_epoch(dataset, config.batch_size, config.seed, epoch)?;
    for step in 0..config.steps {
        let batch = match batches.next() {
            Some(b) => b,
            None => {
                epoch += 1;
                batches = batch_iter_epoch(dataset, config.batch_size, config.seed, epoch)?;
                batches.next().expect("batch size checked against dataset size")
            }
        };
        let mut rng = rng::stream(config.seed, purpose::TRAIN + step as u64);
        let (loss, grads) = {
            let mut g = Graph::new();
            let l = match &sched {
                Some(s) => diffusion_objective(&mut g, &model, &DiffusionDraw::sample(&batch, s, &mut rng)?)?,
                None => flow_objective(&mut g, &model, &FlowDraw::sample(&batch, &mut rng)?)?,
            };
            let loss = scalar_of(&g, l);
            if !loss.is_finite() {
                return Err(Error::Training {
                    step,
                    reason: format!("loss is {loss}"),
                });
            }
            (loss, g.backward(l, model.params().len())?)
        };
        if !grads.norm().is_finite() {
            return Err(Error::Training {
                step,
                reason: "non-finite gradient".into(),
            });
        }
        opt.step(model.params_mut(), &grads);
        losses.push(loss);
        if (step + 1) % config.log_every == 0 || step + 1 == config.steps {
            log.push(LossRecord {
                step: step + 1,
                loss,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            observe(step + 1, &model)?;
        }
    }
    let meta = TrainMeta {
        steps: config.steps,
        final_loss: losses.last().copied(),
        seed: config.seed,
        schedule: sched.as_ref().map(|s| s.params),
    };
    Ok(Trained {
        model,
        paradigm: config.paradigm,
        meta,
        losses,
        log,
    })
}

/// Fails unless two trained models were built from the same architecture.
pub fn check_shared_architecture(a: &Trained, b: &Trained) -> Result<()> {
    backbone::assert_same_architecture(&a.model, &b.model)
}

/// Worst coordinate found by a gradient check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Every coordinate of tensors with at most `per_tensor` entries, otherwise
/// `per_tensor` coordinates drawn without replacement from a seeded stream.
pub fn check_coordinates<F: Scalar>(params: &ParamStore<F>, per_tensor: Option<usize>, seed: u64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for id in 0..params.len() {
        let len = params.tensor(id).len();
        match per_tensor {
            Some(k) if k < len => {
                let mut r = rng::stream(seed, purpose::INIT + 2 + id as u64);
                let mut picks = rand::seq::index::sample(&mut r, len, k).into_vec();
                picks.sort_unstable();
                out.extend(picks.into_iter().map(|i| (id, i)));
            }
            _ => out.extend((0..len).map(|i| (id, i))),
        }
    }
    out
}

/// Largest relative difference between `analytic` and central differences of
/// `value` at the given coordinates. Relative error is
/// `|a − n| / max(|a|, |n|, floor)` with `floor = 1e-5`. Central differences
/// of an O(1) loss at `eps = 1e-5` carry about 1e-10 of absolute roundoff, so
/// below the floor the test becomes an absolute one (1e-9 at a 1e-4 bound).
pub fn max_relative_error(
    params: &mut ParamStore<f64>,
    analytic: &[TensorBuf<f64>],
    eps: f64,
    coords: &[(usize, usize)],
    mut value: impl FnMut(&ParamStore<f64>) -> Result<f64>,
) -> Result<GradCheck> {
    const FLOOR: f64 = 1e-5;
    let mut worst = GradCheck {
        max_relative_error: 0.0,
        checked: coords.len(),
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for &(id, i) in coords {
        let orig = params.tensor(id).data()[i];
        params.tensor_mut(id).data_mut()[i] = orig + eps;
        let up = value(params)?;
        params.tensor_mut(id).data_mut()[i] = orig - eps;
        let down = value(params)?;
        params.tensor_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[id].data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        if rel > worst.max_relative_error || worst.worst_param.is_empty() {
            worst.max_relative_error = rel;
            worst.worst_param = params.name(id).to_string();
            worst.worst_index = i;
            worst.analytic = a;
            worst.numeric = numeric;
        }
    }
    Ok(worst)
}

/// Checks the analytic gradient of one objective on a 64-bit model, at the
/// coordinates chosen by [`check_coordinates`].
///
/// The zero-initialized output layer is replaced with random values first;
/// otherwise every gradient except the output layer's would be exactly zero.
pub fn grad_check(
    config: &BackboneConfig,
    paradigm: Paradigm,
    eps: f64,
    per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradCheck> {
    let mut model = Model::<f64>::build(config)?;
    let mut init = rng::stream(seed, purpose::INIT + 1);
    for id in model.output_param_ids() {
        let t = model.params_mut().tensor_mut(id);
        let bound = 1.0 / (t.shape()[0] as f64).sqrt();
        for v in t.data_mut() {
            *v = init.random_range(-bound..bound);
        }
    }
    let batch = 4;
    let mut data_rng = rng::stream(seed, purpose::TRAIN);
    let data: TensorBuf<f64> = rng::normal_tensor(&mut data_rng, &config.batch_shape(batch));
    let sched = ScheduleParams::default().build()?;
    let mut draw_rng = rng::stream(seed, purpose::TRAIN + 1);
    let diff_draw = DiffusionDraw::sample(&data, &sched, &mut draw_rng)?;
    let flow_draw = FlowDraw::sample(&data, &mut draw_rng)?;

    let eval = |p: &ParamStore<f64>, grad: bool| -> Result<(f64, Option<Vec<TensorBuf<f64>>>)> {
        let mut g = if grad { Graph::new() } else { Graph::inference() };
        let (x_t, times, target) = match paradigm {
            Paradigm::Diffusion => (&diff_draw.x_t, &diff_draw.times, &diff_draw.noise),
            Paradigm::Flow => (&flow_draw.x_t, &flow_draw.times, &flow_draw.target),
        };
        let x = g.input(x_t.clone());
        let pred = model.forward_graph_with(p, &mut g, x, times)?;
        let l = g.mse(pred, target.clone())?;
        let v = scalar_of(&g, l);
        let grads = if grad {
            let gr = g.backward(l, p.len())?;
            Some(
                (0..p.len())
                    .map(|id| gr.get(id).cloned().unwrap_or_else(|| TensorBuf::zeros(p.tensor(id).shape().to_vec())))
                    .collect(),
            )
        } else {
            None
        };
        Ok((v, grads))
    };
    let mut params = model.params().clone();
    let analytic = eval(&params, true)?.1.expect("gradients requested");
    let coords = check_coordinates(&params, per_tensor, seed);
    max_relative_error(&mut params, &analytic, eps, &coords, |p| eval(p, false).map(|r| r.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Stub;
    use crate::data::make_toy;
    use std::collections::BTreeMap;

    fn gaussian_batch(n: usize, dim: usize, seed: u64) -> TensorBuf<f32> {
        rng::normal_per_item(seed, 0, &[n, dim])
    }

    #[test]
    fn perfect_predictors_give_zero_loss() {
        let x0 = gaussian_batch(64, 3, 1);
        let sched = ScheduleParams::default().build().unwrap();
        let draw = DiffusionDraw::sample(&x0, &sched, &mut rng::stream(2, 0)).unwrap();
        let noise = draw.noise.clone();
        let stub = Stub(move |_: &TensorBuf<f32>, _: &[f64]| noise.clone());
        let mut g = Graph::inference();
        let l = diffusion_objective(&mut g, &stub, &draw).unwrap();
        assert_eq!(scalar_of(&g, l), 0.0);

        let draw = FlowDraw::sample(&x0, &mut rng::stream(3, 0)).unwrap();
        let target = draw.target.clone();
        let stub = Stub(move |_: &TensorBuf<f32>, _: &[f64]| target.clone());
        let mut g = Graph::inference();
        let l = flow_objective(&mut g, &stub, &draw).unwrap();
        assert_eq!(scalar_of(&g, l), 0.0);
    }

    /// Mean of `n·d` squared standard normals: expectation 1, standard error `√(2/(n·d))`.
    fn within_four_se(loss: f64, count: usize) {
        let se = (2.0 / count as f64).sqrt();
        assert!((loss - 1.0).abs() < 4.0 * se, "loss {loss}, se {se}");
    }

    #[test]
    fn zero_predictor_diffusion_loss_is_unit() {
        let (n, d) = (20_000, 4);
        let x0 = gaussian_batch(n, d, 5);
        let sched = ScheduleParams::default().build().unwrap();
        let zero = Stub(|x: &TensorBuf<f32>, _: &[f64]| TensorBuf::zeros(x.shape().to_vec()));
        let l = diffusion_loss(&zero, &x0, &sched, &mut rng::stream(6, 0)).unwrap();
        within_four_se(l, n * d);
    }

    #[test]
    fn zero_predictor_flow_loss_on_origin_data_is_unit() {
        let (n, d) = (20_000, 4);
        let x1 = TensorBuf::<f32>::zeros(vec![n, d]);
        let zero = Stub(|x: &TensorBuf<f32>, _: &[f64]| TensorBuf::zeros(x.shape().to_vec()));
        let l = fm_loss(&zero, &x1, &mut rng::stream(7, 0)).unwrap();
        within_four_se(l, n * d);
    }

    #[test]
    fn minus_noise_is_exact_for_origin_data() {
        let x1 = TensorBuf::<f32>::zeros(vec![32, 2]);
        let draw = FlowDraw::sample(&x1, &mut rng::stream(8, 0)).unwrap();
        let neg = draw.noise.scale(-1.0);
        let stub = Stub(move |_: &TensorBuf<f32>, _: &[f64]| neg.clone());
        let mut g = Graph::inference();
        let l = flow_objective(&mut g, &stub, &draw).unwrap();
        assert_eq!(scalar_of(&g, l), 0.0);
    }

    #[test]
    fn loss_is_invariant_to_batch_order() {
        let model = {
            let mut m = Model::<f32>::build(&BackboneConfig::toy_mlp()).unwrap();
            let [w, b] = m.output_param_ids();
            for id in [w, b] {
                let shape = m.params().tensor(id).shape().to_vec();
                *m.params_mut().tensor_mut(id) = rng::normal_per_item(9, id as u64, &shape).scale(0.1);
            }
            m
        };
        let x = gaussian_batch(16, 2, 10);
        let perm: Vec<usize> = (0..16).map(|i| (i * 7 + 3) % 16).collect();
        let sched = ScheduleParams::default().build().unwrap();
        let d = DiffusionDraw::sample(&x, &sched, &mut rng::stream(11, 0)).unwrap();
        let f = FlowDraw::sample(&x, &mut rng::stream(12, 0)).unwrap();
        let eval_d = |d: &DiffusionDraw<f32>| {
            let mut g = Graph::inference();
            let l = diffusion_objective(&mut g, &model, d).unwrap();
            scalar_of(&g, l)
        };
        let eval_f = |d: &FlowDraw<f32>| {
            let mut g = Graph::inference();
            let l = flow_objective(&mut g, &model, d).unwrap();
            scalar_of(&g, l)
        };
        assert!((eval_d(&d) - eval_d(&d.permuted(&perm))).abs() < 1e-6);
        assert!((eval_f(&f) - eval_f(&f.permuted(&perm))).abs() < 1e-6);
        assert!(eval_d(&d) >= 0.0 && eval_f(&f) >= 0.0);
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        store.push("a", rng::normal_per_item(1, 0, &[3, 4]));
        store.push("b", rng::normal_per_item(2, 0, &[5]));
        let analytic: Vec<_> = store.tensors().iter().map(|t| t.scale(2.0)).collect();
        let coords = check_coordinates(&store, None, 0);
        assert_eq!(coords.len(), 17);
        let err = max_relative_error(&mut store, &analytic, 1e-5, &coords, |p| {
            Ok(p.tensors().iter().map(|t| t.data().iter().map(|v| v * v).sum::<f64>()).sum())
        })
        .unwrap();
        assert!(err.max_relative_error < 1e-8, "{err:?}");
        let sub = check_coordinates(&store, Some(4), 0);
        assert_eq!(sub.len(), 8);
        assert!(sub.windows(2).all(|w| w[0] < w[1]));
    }

    fn small_toy() -> BackboneConfig {
        BackboneConfig {
            channel_multipliers: vec![16, 16],
            time_embed_dim: 8,
            time_hidden: 16,
            ..BackboneConfig::toy_mlp()
        }
    }

    #[test]
    fn toy_gradients_match_finite_differences() {
        for p in [Paradigm::Diffusion, Paradigm::Flow] {
            let err = grad_check(&small_toy(), p, 1e-5, None, 3).unwrap();
            assert!(err.max_relative_error < 1e-4, "{p}: {err:?}");
        }
    }

    fn single_gaussian(count: usize) -> crate::data::ToyDataset {
        let params = BTreeMap::from([("mean_x".to_string(), 3.0)]);
        make_toy("single_gaussian", count, 1, &params).unwrap()
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let ds = single_gaussian(256);
        let mut cfg = TrainConfig::new(Paradigm::Flow, BackboneConfig::toy_mlp());
        cfg.steps = 0;
        let t = train(&cfg, &ds).unwrap();
        let init = Model::<f32>::build(&cfg.backbone).unwrap();
        assert_eq!(t.model.params().flatten(), init.params().flatten());
        assert!(t.log.is_empty());
        assert_eq!(t.meta.final_loss, None);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = single_gaussian(256);
        let mut cfg = TrainConfig::new(Paradigm::Diffusion, small_toy());
        cfg.steps = 30;
        cfg.batch_size = 64;
        cfg.log_every = 10;
        let a = train(&cfg, &ds).unwrap();
        let b = train(&cfg, &ds).unwrap();
        let bits = |t: &Trained| t.model.params().flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.log.len(), 3);
        assert_eq!(a.meta.schedule, Some(ScheduleParams::default()));
    }

    #[test]
    fn rejects_bad_settings() {
        let ds = single_gaussian(64);
        let mut cfg = TrainConfig::new(Paradigm::Flow, BackboneConfig::toy_mlp());
        cfg.learning_rate = 0.0;
        assert!(train(&cfg, &ds).unwrap_err().is_config());
        let mut cfg = TrainConfig::new(Paradigm::Flow, BackboneConfig::tiny_unet());
        cfg.steps = 1;
        cfg.batch_size = 8;
        assert!(matches!(train(&cfg, &ds), Err(Error::Shape { .. })));
    }

    #[test]
    fn divergence_is_a_training_fault() {
        let ds = single_gaussian(64);
        let mut cfg = TrainConfig::new(Paradigm::Flow, small_toy());
        cfg.learning_rate = 1e30;
        cfg.steps = 50;
        cfg.batch_size = 32;
        assert!(matches!(train(&cfg, &ds), Err(Error::Training { .. })));
    }
}
