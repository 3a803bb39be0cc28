//! Acceptance checks. Each check returns an [`Outcome`]; the toy profile
//! trains a flow and a diffusion model on a 2D mixture and feeds the
//! curvature, step-count, solver and latency checks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, Paradigm, Preset};
use crate::benchmark::{
    self, energy_proxy, frechet_distance, measure_latency, nfe_matched_pairs, solver_sensitivity, step_ablation,
    BenchReport, Features, LatencyStats, QualityRun, FIXED_TIMESTAMP,
};
use crate::data::{self, Dataset, ImageDataset, ToyDataset};
use crate::error::{Error, Result};
use crate::geometry::{curvature_stats, separation, straightness, CurvatureStats};
use crate::rng::{self, stream};
use crate::samplers::{integrate_euler, integrate_rk4, FnField, Record, SamplerId};
use crate::schedules::{diffusion_forward_batch, NoiseSchedule, ScheduleParams};
use crate::tensor::TensorBuf;
use crate::training::{self, TrainConfig, Trained};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: u8,
    pub title: String,
    pub status: Status,
    pub detail: String,
}

impl Outcome {
    fn new(id: u8, title: &str, pass: bool, detail: String) -> Self {
        Self {
            id,
            title: title.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            detail,
        }
    }

    pub fn skipped(id: u8, title: &str, detail: impl Into<String>) -> Self {
        Self {
            id,
            title: title.into(),
            status: Status::Skipped,
            detail: detail.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        write!(f, "criterion {:>2} [{tag}] {}: {}", self.id, self.title, self.detail)
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    ((got - want) / want).abs()
}

fn within(ratio: f64, target: f64, tol: f64) -> bool {
    (ratio / target - 1.0).abs() <= tol
}

/// ᾱ_T of the default schedule against an independently accumulated product.
pub fn schedule_oracle() -> Result<Outcome> {
    let p = ScheduleParams::default();
    let sched = p.build()?;
    let t = p.steps;
    let mut prod = 1.0f64;
    for k in 1..=t {
        let beta = p.beta_start + (p.beta_end - p.beta_start) * (k - 1) as f64 / (t - 1) as f64;
        prod *= 1.0 - beta;
    }
    let err = rel_err(sched.alpha_bar_at(t), prod);
    Ok(Outcome::new(
        1,
        "schedule oracle",
        err <= 1e-10,
        format!("alpha_bar_T = {:.6e}, brute force {prod:.6e}, rel err {err:.1e}", sched.alpha_bar_at(t)),
    ))
}

/// Monte-Carlo mean and variance of `x_k` for a fixed `x₀` at five random
/// steps, each within 4 standard errors.
pub fn forward_statistics(seed: u64) -> Result<Outcome> {
    const DRAWS: usize = 100_000;
    let sched = ScheduleParams::default().build()?;
    let mut pick = stream(seed, 0);
    let x0_value = 0.7;
    let mut worst = 0.0f64;
    let mut steps = Vec::new();
    for j in 0..5u64 {
        let k = rand::Rng::random_range(&mut pick, 1..=sched.steps());
        steps.push(k);
        let x0 = TensorBuf::<f64>::full(vec![DRAWS, 1], x0_value);
        let eps = rng::normal_per_item::<f64>(seed, 1 + j * DRAWS as u64, &[DRAWS, 1]);
        let xt = diffusion_forward_batch(&x0, &vec![k; DRAWS], &eps, &sched)?;
        let ab = sched.alpha_bar_at(k);
        let (mu, var) = (ab.sqrt() * x0_value, 1.0 - ab);
        let n = DRAWS as f64;
        let m = xt.data().iter().sum::<f64>() / n;
        let v = xt.data().iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        let z_mean = (m - mu).abs() / (var / n).sqrt();
        let z_var = (v - var).abs() / (var * (2.0 / (n - 1.0)).sqrt());
        worst = worst.max(z_mean).max(z_var);
    }
    Ok(Outcome::new(
        2,
        "forward-process statistics",
        worst <= 4.0,
        format!("steps {steps:?}, worst deviation {worst:.2} standard errors at {DRAWS} draws"),
    ))
}

/// Coordinates checked per large parameter tensor.
pub const GRAD_CHECK_COORDS: usize = 512;
pub const GRAD_CHECK_EPS: f64 = 1e-5;

/// Analytic against central-difference gradients for both losses in `f64`.
pub fn gradient_check(seed: u64) -> Result<Outcome> {
    let cfg = BackboneConfig::toy_mlp().with_seed(seed);
    let run = |p| training::grad_check(&cfg, p, GRAD_CHECK_EPS, Some(GRAD_CHECK_COORDS), seed);
    let (diff, flow) = (run(Paradigm::Diffusion)?, run(Paradigm::Flow)?);
    Ok(Outcome::new(
        3,
        "gradient check",
        diff.max_relative_error < 1e-4 && flow.max_relative_error < 1e-4,
        format!(
            "max relative error over {} coordinates: noise prediction {:.2e} (at {}), velocity regression {:.2e} (at {})",
            diff.checked, diff.max_relative_error, diff.worst_param, flow.max_relative_error, flow.worst_param
        ),
    ))
}

/// Error ratios on `dx/dt = −x` as N doubles, and one RK4 step on `dx/dt = x`.
pub fn integrator_order() -> Result<Outcome> {
    let decay = FnField(|x: &TensorBuf<f64>, _t: f64| x.scale(-1.0));
    let x0 = TensorBuf::<f64>::full(vec![1, 1], 1.0);
    let exact = (-1.0f64).exp();
    let err = |rk4: bool, n: usize| -> Result<f64> {
        let traj = if rk4 {
            integrate_rk4(&decay, &x0, n, Record::Endpoints)?
        } else {
            integrate_euler(&decay, &x0, n, Record::Endpoints)?
        };
        Ok((traj.final_state().data()[0] - exact).abs())
    };
    let mut ratios = Vec::new();
    let mut ok = true;
    for (rk4, target) in [(false, 2.0), (true, 16.0)] {
        for n in [10, 20] {
            let r = err(rk4, n)? / err(rk4, 2 * n)?;
            ok &= within(r, target, 0.3);
            ratios.push(r);
        }
    }
    let growth = FnField(|x: &TensorBuf<f64>, _t: f64| x.clone());
    let one = integrate_rk4(&growth, &TensorBuf::full(vec![1, 1], 1.0), 1, Record::Endpoints)?;
    let single = (one.final_state().data()[0] - 65.0 / 24.0).abs();
    ok &= single <= 1e-12;
    Ok(Outcome::new(
        4,
        "integrator order",
        ok,
        format!(
            "euler ratios {:.3}, {:.3}; rk4 ratios {:.2}, {:.2}; rk4 N=1 error {single:.1e}",
            ratios[0], ratios[1], ratios[2], ratios[3]
        ),
    ))
}

fn random_orthogonal(rng: &mut rng::StreamRng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng::normal::<f64>(rng));
    a.qr().q()
}

/// Collinear paths give 1, the right-angle path √2, and the ratio survives
/// random rotations, reflections, translations and scalings.
pub fn straightness_oracle(seed: u64, cases: usize) -> Result<Outcome> {
    let collinear: Vec<Vec<f64>> = [0.0, 0.5, 1.25, 3.0].iter().map(|&s| vec![s, 2.0 * s, -s]).collect();
    let c_line = straightness(&collinear)?;
    let c_right = straightness(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]])?;
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut r = stream(seed, case as u64);
        let d = rand::Rng::random_range(&mut r, 2..=6);
        let len = rand::Rng::random_range(&mut r, 2..=12);
        let path: Vec<Vec<f64>> = (0..len).map(|_| (0..d).map(|_| rng::normal::<f64>(&mut r)).collect()).collect();
        let Ok(c) = straightness(&path) else { continue };
        let q = random_orthogonal(&mut r, d);
        let shift: Vec<f64> = (0..d).map(|_| 10.0 * rng::normal::<f64>(&mut r)).collect();
        let scale = (2.0 * rng::normal::<f64>(&mut r)).exp();
        let moved: Vec<Vec<f64>> = path
            .iter()
            .map(|p| {
                let y = &q * nalgebra::DVector::from_column_slice(p);
                y.iter().zip(&shift).map(|(a, b)| scale * a + b).collect()
            })
            .collect();
        worst = worst.max(rel_err(straightness(&moved)?, c));
    }
    let right_err = (c_right - 2f64.sqrt()).abs();
    Ok(Outcome::new(
        5,
        "straightness oracle",
        c_line == 1.0 && right_err <= 1e-12 && worst <= 1e-9,
        format!("collinear C = {c_line}, right angle error {right_err:.1e}, worst isometry drift {worst:.1e} over {cases} cases"),
    ))
}

/// Zero on identical sets; `N(0,1)` against `N(1,4)` gives 2 within 4
/// Monte-Carlo standard errors.
pub fn frechet_oracle(seed: u64) -> Result<Outcome> {
    const N: usize = 100_000;
    let same = rng::normal_per_item::<f64>(seed, 0, &[500, 8]);
    let self_fd = frechet_distance(&same, &same)?;
    let a = rng::normal_per_item::<f64>(seed, 1_000_000, &[N, 1]);
    let b = rng::normal_per_item::<f64>(seed, 2_000_000, &[N, 1]).map(|v| 1.0 + 2.0 * v);
    let fd = frechet_distance(&a, &b)?;
    // Delta method: (Δμ)² + (Δσ)² with Δμ = 1, Δσ = −1.
    let n = N as f64;
    let se = (4.0 * (1.0 + 4.0) / n + 4.0 * (1.0 + 4.0) / (2.0 * n)).sqrt();
    let z = (fd - 2.0).abs() / se;
    Ok(Outcome::new(
        10,
        "Frechet distance oracle",
        self_fd <= 1e-6 && z <= 4.0,
        format!("identical sets {self_fd:.1e}; 1-D closed form 2 vs {fd:.4} ({z:.2} standard errors)"),
    ))
}

/// Settings of the desk-scale two-mode reproduction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyProfile {
    pub generator: String,
    pub train_count: usize,
    pub reference_count: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Generated samples per sample-quality configuration.
    pub eval_count: usize,
    pub curvature_n: usize,
    pub curvature_steps: usize,
    pub ablation_steps: Vec<usize>,
    pub latency_warmup: usize,
    pub latency_reps: usize,
    pub threads: usize,
}

impl Default for ToyProfile {
    fn default() -> Self {
        Self {
            generator: "two_gaussians".into(),
            train_count: 20_000,
            reference_count: 5_000,
            train_steps: 5_000,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
            eval_count: 5_000,
            curvature_n: 100,
            curvature_steps: 50,
            ablation_steps: vec![5, 10, 20, 50, 100],
            latency_warmup: 5,
            latency_reps: 50,
            threads: 1,
        }
    }
}

impl ToyProfile {
    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig::from_preset(Preset::ToyMlp).with_seed(self.seed)
    }

    pub fn train_config(&self, paradigm: Paradigm) -> TrainConfig {
        TrainConfig {
            steps: self.train_steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            log_every: (self.train_steps / 50).max(1),
            ..TrainConfig::new(paradigm, self.backbone())
        }
    }

    /// Training points and a disjoint held-out reference set.
    pub fn data(&self) -> Result<(ToyDataset, TensorBuf<f32>)> {
        let all = data::make_toy(&self.generator, self.train_count + self.reference_count, self.seed, &BTreeMap::new())?;
        let reference = all.points.slice_batch(self.train_count, self.train_count + self.reference_count);
        let train = ToyDataset {
            points: all.points.slice_batch(0, self.train_count),
            ..all
        };
        Ok((train, reference))
    }
}

pub struct ToyModels {
    pub flow: Trained,
    pub diffusion: Trained,
    pub reference: TensorBuf<f32>,
    pub sched: NoiseSchedule,
}

/// Trains both paradigms side by side on the profile's data.
pub fn train_toy(profile: &ToyProfile) -> Result<ToyModels> {
    let (train, reference) = profile.data()?;
    let (fc, dc) = (profile.train_config(Paradigm::Flow), profile.train_config(Paradigm::Diffusion));
    let (flow, diffusion) = std::thread::scope(|s| {
        let f = s.spawn(|| training::train(&fc, &train));
        let d = s.spawn(|| training::train(&dc, &train));
        (f.join().expect("flow training panicked"), d.join().expect("diffusion training panicked"))
    });
    Ok(ToyModels {
        flow: flow?,
        diffusion: diffusion?,
        reference,
        sched: dc.schedule_params().build()?,
    })
}

fn quality_run<'a>(profile: &ToyProfile, models: &'a ToyModels) -> QualityRun<'a> {
    QualityRun {
        sched: &models.sched,
        reference: &models.reference,
        features: Features::Pixel,
        count: profile.eval_count,
        seed: profile.seed + 1,
        threads: profile.threads,
        timestamp: FIXED_TIMESTAMP.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSummary {
    pub flow_euler: CurvatureStats,
    pub diffusion_ddim: CurvatureStats,
    pub diffusion_ancestral: CurvatureStats,
    /// Pooled standard errors between flow and DDIM means.
    pub separation: f64,
}

pub fn toy_curvature(profile: &ToyProfile, models: &ToyModels) -> Result<CurvatureSummary> {
    let shape = models.flow.model.config().in_shape.clone();
    let (n, steps, seed) = (profile.curvature_n, profile.curvature_steps, profile.seed + 2);
    let flow = curvature_stats(&models.flow.model, &shape, SamplerId::Euler, &models.sched, steps, n, seed)?;
    let ddim = curvature_stats(&models.diffusion.model, &shape, SamplerId::Ddim, &models.sched, steps, n, seed)?;
    let anc = curvature_stats(&models.diffusion.model, &shape, SamplerId::Ancestral, &models.sched, steps, n, seed)?;
    Ok(CurvatureSummary {
        separation: separation(&flow, &ddim),
        flow_euler: flow,
        diffusion_ddim: ddim,
        diffusion_ancestral: anc,
    })
}

pub fn curvature_ordering(c: &CurvatureSummary) -> Outcome {
    let (f, d) = (c.flow_euler.mean, c.diffusion_ddim.mean);
    Outcome::new(
        6,
        "curvature ordering",
        f < 1.15 && d > 1.3 && f < d && c.separation >= 3.0,
        format!(
            "C_flow(euler,{n}) = {f:.4} (need < 1.15), C_diffusion(ddim,{n}) = {d:.4} (need > 1.3), gap {:.1} SE (need >= 3); ancestral C = {:.3}",
            c.separation,
            c.diffusion_ancestral.mean,
            n = c.flow_euler.steps
        ),
    )
}

pub fn toy_step_ablation(profile: &ToyProfile, models: &ToyModels) -> Result<(BenchReport, benchmark::SampleSets)> {
    step_ablation(&models.flow.model, &models.diffusion.model, &profile.ablation_steps, &quality_run(profile, models))
}

pub fn efficiency_frontier(report: &BenchReport) -> Result<Outcome> {
    let fd = |name: &str| {
        report
            .find(name, "fd")
            .ok_or_else(|| Error::Analysis(format!("step report lacks `{name}`")))
    };
    let (f10, f100) = (fd("flow/euler/N=10")?, fd("flow/euler/N=100")?);
    let (d10, d100) = (fd("diffusion/ancestral/N=10")?, fd("diffusion/ancestral/N=100")?);
    Ok(Outcome::new(
        7,
        "efficiency frontier",
        f10 <= 2.0 * f100 && d10 >= 3.0 * d100,
        format!(
            "flow FD N=10 {f10:.4} vs N=100 {f100:.4} (ratio {:.2}, need <= 2); diffusion FD N=10 {d10:.4} vs N=100 {d100:.4} (ratio {:.2}, need >= 3)",
            f10 / f100,
            d10 / d100
        ),
    ))
}

pub fn toy_solver(profile: &ToyProfile, models: &ToyModels) -> Result<(BenchReport, benchmark::SampleSets)> {
    let shape = models.flow.model.config().in_shape.clone();
    let configs = nfe_matched_pairs(&[16])?;
    benchmark::check_equal_cost(models.flow.model.config(), &configs)?;
    solver_sensitivity(&models.flow.model, &shape, &configs, &quality_run(profile, models))
}

pub fn solver_sufficiency(report: &BenchReport) -> Result<Outcome> {
    let e = report.find("euler/N=16", "fd").ok_or_else(|| Error::Analysis("solver report lacks euler/N=16".into()))?;
    let r = report.find("rk4/N=4", "fd").ok_or_else(|| Error::Analysis("solver report lacks rk4/N=4".into()))?;
    let gap = (r - e).abs();
    let pair = report.pairs.first().map_or(f64::NAN, |p| p.fd);
    Ok(Outcome::new(
        8,
        "solver sufficiency",
        gap <= 0.25 * e,
        format!("FD euler(16) {e:.4}, rk4(4) {r:.4}, |diff| {gap:.4} (need <= {:.4}); FD between the two sample sets {pair:.4}", 0.25 * e),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub stats: Vec<LatencyStats>,
    pub nfe_euler_10: usize,
    pub nfe_ancestral_100: usize,
}

/// Single-threaded batch-1 latency of the flow model for Euler at N=10 and
/// N=50 and RK4 at N=50.
pub fn toy_latency(profile: &ToyProfile, models: &ToyModels) -> Result<LatencySummary> {
    let shape = models.flow.model.config().in_shape.clone();
    let mut stats = Vec::new();
    for (sampler, steps) in [(SamplerId::Euler, 10), (SamplerId::Euler, 50), (SamplerId::Rk4, 50)] {
        stats.push(measure_latency(
            &models.flow.model,
            &shape,
            sampler,
            &models.sched,
            steps,
            1,
            profile.latency_warmup,
            profile.latency_reps,
        )?);
    }
    let cfg = models.flow.model.config();
    Ok(LatencySummary {
        stats,
        nfe_euler_10: energy_proxy(cfg, SamplerId::Euler, 10)?.nfe,
        nfe_ancestral_100: energy_proxy(cfg, SamplerId::Ancestral, 100)?.nfe,
    })
}

pub fn latency_scaling(l: &LatencySummary) -> Outcome {
    let med = |s: SamplerId, n: usize| {
        l.stats
            .iter()
            .find(|x| x.sampler == s && x.steps == n)
            .map_or(f64::NAN, |x| x.median_ms)
    };
    let steps_ratio = med(SamplerId::Euler, 50) / med(SamplerId::Euler, 10);
    let solver_ratio = med(SamplerId::Rk4, 50) / med(SamplerId::Euler, 50);
    let nfe_ratio = l.nfe_ancestral_100 as f64 / l.nfe_euler_10 as f64;
    Outcome::new(
        9,
        "latency scaling",
        within(steps_ratio, 5.0, 0.2) && within(solver_ratio, 4.0, 0.25) && nfe_ratio == 10.0,
        format!(
            "euler N=50/N=10 {steps_ratio:.2} (need 5 +/- 20%), rk4/euler at N=50 {solver_ratio:.2} (need 4 +/- 25%), NFE ancestral(100)/euler(10) {nfe_ratio}"
        ),
    )
}

/// Serialized report bytes of a step ablation, a solver comparison and a
/// curvature table, produced twice serially; a third run with `threads`
/// workers must give the same rows.
pub fn determinism(profile: &ToyProfile, models: &ToyModels, threads: usize) -> Result<Outcome> {
    let small = ToyProfile {
        eval_count: 500,
        ablation_steps: vec![5, 10],
        curvature_n: 10,
        ..profile.clone()
    };
    let run = |t: usize| -> Result<(Vec<u8>, Vec<benchmark::Row>)> {
        let p = ToyProfile { threads: t, ..small.clone() };
        let (steps, _) = toy_step_ablation(&p, models)?;
        let (solver, _) = toy_solver(&p, models)?;
        let curv = toy_curvature(&p, models)?;
        let mut bytes = Vec::new();
        for r in [&steps, &solver] {
            bytes.extend(serde_json::to_vec(r)?);
            bytes.extend(r.to_csv().into_bytes());
        }
        bytes.extend(curv.flow_euler.to_csv().into_bytes());
        Ok((bytes, [steps.rows, solver.rows].concat()))
    };
    let threads = threads.max(2);
    let (first, rows) = run(1)?;
    let (second, _) = run(1)?;
    let (_, threaded) = run(threads)?;
    let same = first == second;
    let thread_free = rows == threaded;
    Ok(Outcome::new(
        11,
        "determinism",
        same && thread_free,
        format!(
            "{} report bytes {} on rerun; rows with {threads} threads {}",
            first.len(),
            if same { "identical" } else { "differ" },
            if thread_free { "identical" } else { "differ" }
        ),
    ))
}

/// Headline numbers of a toy run, compared against the committed reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyMetrics {
    pub final_loss_flow: f64,
    pub final_loss_diffusion: f64,
    pub c_flow_euler: f64,
    pub c_diffusion_ddim: f64,
    pub c_diffusion_ancestral: f64,
    pub curvature_separation: f64,
    pub fd: BTreeMap<String, f64>,
}

impl ToyMetrics {
    pub fn collect(models: &ToyModels, curv: &CurvatureSummary, reports: &[&BenchReport]) -> Self {
        let fd = reports
            .iter()
            .flat_map(|r| r.rows.iter())
            .filter(|row| row.metric == "fd")
            .map(|row| (row.config.clone(), row.value))
            .collect();
        Self {
            final_loss_flow: models.flow.meta.final_loss.unwrap_or(f64::NAN),
            final_loss_diffusion: models.diffusion.meta.final_loss.unwrap_or(f64::NAN),
            c_flow_euler: curv.flow_euler.mean,
            c_diffusion_ddim: curv.diffusion_ddim.mean,
            c_diffusion_ancestral: curv.diffusion_ancestral.mean,
            curvature_separation: curv.separation,
            fd,
        }
    }

    /// Largest relative difference over all shared values.
    pub fn max_relative_drift(&self, reference: &Self) -> f64 {
        let mut pairs = vec![
            (self.c_flow_euler, reference.c_flow_euler),
            (self.c_diffusion_ddim, reference.c_diffusion_ddim),
            (self.c_diffusion_ancestral, reference.c_diffusion_ancestral),
        ];
        for (k, v) in &self.fd {
            if let Some(r) = reference.fd.get(k) {
                pairs.push((*v, *r));
            }
        }
        pairs.iter().map(|(a, b)| rel_err(*a, *b)).fold(0.0, f64::max)
    }
}

/// Every toy-profile artifact, returned so callers can write what they need.
pub struct ToyRun {
    pub models: ToyModels,
    pub curvature: CurvatureSummary,
    pub steps: BenchReport,
    pub step_sets: benchmark::SampleSets,
    pub solver: BenchReport,
    pub solver_sets: benchmark::SampleSets,
    pub latency: LatencySummary,
    pub metrics: ToyMetrics,
    pub outcomes: Vec<Outcome>,
}

/// Trains the toy pair and evaluates criteria 6 to 9 and 11.
pub fn run_toy(profile: &ToyProfile) -> Result<ToyRun> {
    let models = train_toy(profile)?;
    let curvature = toy_curvature(profile, &models)?;
    let (steps, step_sets) = toy_step_ablation(profile, &models)?;
    let (solver, solver_sets) = toy_solver(profile, &models)?;
    let latency = toy_latency(profile, &models)?;
    let outcomes = vec![
        curvature_ordering(&curvature),
        efficiency_frontier(&steps)?,
        solver_sufficiency(&solver)?,
        latency_scaling(&latency),
        determinism(profile, &models, 4)?,
    ];
    let metrics = ToyMetrics::collect(&models, &curvature, &[&steps, &solver]);
    Ok(ToyRun {
        models,
        curvature,
        steps,
        step_sets,
        solver,
        solver_sets,
        latency,
        metrics,
        outcomes,
    })
}

/// Criteria that need no trained model.
pub fn analytic_checks(seed: u64) -> Result<Vec<Outcome>> {
    Ok(vec![
        schedule_oracle()?,
        forward_statistics(seed)?,
        gradient_check(seed)?,
        integrator_order()?,
        straightness_oracle(seed, 1000)?,
        frechet_oracle(seed)?,
    ])
}

/// Settings of the image-scale smoke run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnistProfile {
    pub images: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub grid_count: usize,
    pub curvature_n: usize,
    pub threads: usize,
}

impl Default for MnistProfile {
    fn default() -> Self {
        Self {
            images: 5_000,
            train_steps: 2_000,
            batch_size: 32,
            learning_rate: 2e-4,
            seed: 0,
            grid_count: 64,
            curvature_n: 100,
            threads: 1,
        }
    }
}

pub struct MnistRun {
    pub flow: Trained,
    pub diffusion: Trained,
    pub curvature: CurvatureSummary,
    /// `(name, samples)` for N = 10 and N = 50 per paradigm.
    pub grids: benchmark::SampleSets,
    pub outcome: Outcome,
}

/// Trains `tiny_unet` on an image subset, draws grids at N = 10 and 50 and
/// repeats the curvature ordering check.
pub fn run_mnist(dataset: &ImageDataset, profile: &MnistProfile) -> Result<MnistRun> {
    let subset = dataset.subset(profile.images.min(dataset.count()))?;
    let backbone = BackboneConfig::from_preset(Preset::TinyUnet).with_seed(profile.seed);
    let cfg = |paradigm| TrainConfig {
        steps: profile.train_steps,
        batch_size: profile.batch_size,
        learning_rate: profile.learning_rate,
        seed: profile.seed,
        log_every: (profile.train_steps / 50).max(1),
        ..TrainConfig::new(paradigm, backbone.clone())
    };
    let (fc, dc) = (cfg(Paradigm::Flow), cfg(Paradigm::Diffusion));
    let (flow, diffusion) = std::thread::scope(|s| {
        let f = s.spawn(|| training::train(&fc, &subset));
        let d = s.spawn(|| training::train(&dc, &subset));
        (f.join().expect("flow training panicked"), d.join().expect("diffusion training panicked"))
    });
    let models = ToyModels {
        flow: flow?,
        diffusion: diffusion?,
        reference: subset.images.slice_batch(0, profile.grid_count.min(subset.count())),
        sched: dc.schedule_params().build()?,
    };
    let mut grids = Vec::new();
    for n in [10, 50] {
        for (m, paradigm, sampler) in [
            (&models.flow, Paradigm::Flow, SamplerId::Euler),
            (&models.diffusion, Paradigm::Diffusion, SamplerId::Ancestral),
        ] {
            let opts = crate::samplers::GenerateOptions {
                sampler,
                steps: n,
                count: profile.grid_count,
                seed: profile.seed + 1,
                record: None,
                threads: profile.threads,
            };
            let g = crate::samplers::generate(&m.model, paradigm, &models.sched, &opts)?;
            grids.push((format!("{paradigm}/{sampler}/N={n}"), g.samples));
        }
    }
    let toy = ToyProfile {
        curvature_n: profile.curvature_n,
        seed: profile.seed,
        ..ToyProfile::default()
    };
    let curvature = toy_curvature(&toy, &models)?;
    let mut outcome = curvature_ordering(&curvature);
    outcome.id = 12;
    outcome.title = "image-scale smoke run".into();
    Ok(MnistRun {
        flow: models.flow,
        diffusion: models.diffusion,
        curvature,
        grids,
        outcome,
    })
}

/// Markdown summary with one line per criterion.
pub fn summary_markdown(outcomes: &[Outcome], notes: &[String]) -> String {
    let mut sorted: Vec<&Outcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.id);
    let passed = sorted.iter().filter(|o| o.passed()).count();
    let mut s = format!("# Reproduction summary\n\n{passed} of {} criteria pass.\n\n", sorted.len());
    for o in sorted {
        s.push_str(&format!("- {o}\n"));
    }
    if !notes.is_empty() {
        s.push_str("\n## Notes\n\n");
        for n in notes {
            s.push_str(&format!("- {n}\n"));
        }
    }
    s
}

pub fn read_toy_metrics(path: impl AsRef<Path>) -> Result<ToyMetrics> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
