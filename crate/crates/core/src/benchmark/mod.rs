//! Step-count ablation, solver comparison, latency measurement and the
//! NFE-based cost proxy, with JSON and CSV reports.

pub mod classifier;
pub mod frechet;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use classifier::Classifier;
pub use frechet::{frechet_distance, gaussian_fit};

use crate::backbone::{assert_same_architecture, BackboneConfig, Model, Paradigm};
use crate::error::{Error, Result};
use crate::samplers::{self, initial_noise, run_sampler, Field, GenerateOptions, Record, SamplerId};
use crate::schedules::NoiseSchedule;
use crate::tensor::TensorBuf;

/// Timestamp written in deterministic mode so reruns are byte-identical.
pub const FIXED_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Steps,
    Solver,
    Latency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// Human-readable configuration, e.g. `flow/euler/N=10`.
    pub config: String,
    /// Value of the swept variable; rows are sorted by it.
    pub sweep: f64,
    pub metric: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub cores: usize,
    pub threads: usize,
    pub precision: String,
}

impl Environment {
    pub fn current(threads: usize) -> Self {
        Self {
            cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
            threads,
            precision: "f32".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseFd {
    pub a: String,
    pub b: String,
    pub fd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub experiment: Experiment,
    pub feature_space: Option<FeatureSpace>,
    pub rows: Vec<Row>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<PairwiseFd>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub environment: Environment,
    pub seed: u64,
    pub timestamp: String,
}

impl BenchReport {
    pub fn new(experiment: Experiment, seed: u64, env: Environment, timestamp: String) -> Self {
        Self {
            experiment,
            feature_space: None,
            rows: Vec::new(),
            pairs: Vec::new(),
            warnings: Vec::new(),
            environment: env,
            seed,
            timestamp,
        }
    }

    pub fn push(&mut self, config: impl Into<String>, sweep: f64, metric: &str, value: f64, unit: &str) -> Result<()> {
        let config = config.into();
        if !value.is_finite() {
            return Err(Error::Analysis(format!("{config}: {metric} is not finite ({value})")));
        }
        self.rows.push(Row {
            config,
            sweep,
            metric: metric.into(),
            value,
            unit: unit.into(),
        });
        Ok(())
    }

    /// Stable sort by the sweep variable.
    pub fn finish(mut self) -> Self {
        self.rows.sort_by(|a, b| a.sweep.total_cmp(&b.sweep));
        self
    }

    pub fn find(&self, config: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.config == config && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,sweep,metric,value,unit\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.config, r.sweep, r.metric, r.value, r.unit));
        }
        s
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

/// Where samples are embedded before the Gaussian fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    Pixel,
    Classifier,
}

/// Feature extractor for the Fréchet distance.
pub enum Features<'a> {
    Pixel,
    Classifier(&'a Classifier),
}

impl Features<'_> {
    pub fn space(&self) -> FeatureSpace {
        match self {
            Features::Pixel => FeatureSpace::Pixel,
            Features::Classifier(_) => FeatureSpace::Classifier,
        }
    }

    pub fn feature_dim(&self, item_len: usize) -> usize {
        match self {
            Features::Pixel => item_len,
            Features::Classifier(c) => c.feature_dim(),
        }
    }

    pub fn embed(&self, x: &TensorBuf<f32>) -> Result<TensorBuf<f32>> {
        match self {
            Features::Pixel => x.clone().reshape(vec![x.batch(), x.item_len()]),
            Features::Classifier(c) => c.features(x),
        }
    }

    pub fn distance(&self, a: &TensorBuf<f32>, b: &TensorBuf<f32>) -> Result<f64> {
        frechet_distance(&self.embed(a)?, &self.embed(b)?)
    }
}

/// Shared settings for the sample-quality experiments.
pub struct QualityRun<'a> {
    pub sched: &'a NoiseSchedule,
    /// Real samples the generated sets are compared against.
    pub reference: &'a TensorBuf<f32>,
    pub features: Features<'a>,
    pub count: usize,
    pub seed: u64,
    pub threads: usize,
    pub timestamp: String,
}

/// Generated sample sets keyed by configuration, for grid export.
pub type SampleSets = Vec<(String, TensorBuf<f32>)>;

fn generate_set(
    model: &Model<f32>,
    paradigm: Paradigm,
    sampler: SamplerId,
    steps: usize,
    run: &QualityRun<'_>,
) -> Result<TensorBuf<f32>> {
    let opts = GenerateOptions {
        sampler,
        steps,
        count: run.count,
        seed: run.seed,
        record: None,
        threads: run.threads,
    };
    Ok(samplers::generate(model, paradigm, run.sched, &opts)?.samples)
}

/// FD against the reference set for flow (Euler) and diffusion (ancestral)
/// at each step count.
pub fn step_ablation(
    flow: &Model<f32>,
    diffusion: &Model<f32>,
    step_counts: &[usize],
    run: &QualityRun<'_>,
) -> Result<(BenchReport, SampleSets)> {
    assert_same_architecture(flow, diffusion)?;
    if step_counts.is_empty() {
        return Err(Error::config("step ablation needs at least one step count"));
    }
    let mut report = BenchReport::new(Experiment::Steps, run.seed, Environment::current(run.threads), run.timestamp.clone());
    report.feature_space = Some(run.features.space());
    let mut sets = Vec::new();
    let mut counts = step_counts.to_vec();
    counts.sort_unstable();
    for &n in &counts {
        for (model, paradigm, sampler) in [
            (flow, Paradigm::Flow, SamplerId::Euler),
            (diffusion, Paradigm::Diffusion, SamplerId::Ancestral),
        ] {
            let samples = generate_set(model, paradigm, sampler, n, run)?;
            let fd = run.features.distance(&samples, run.reference)?;
            let name = format!("{paradigm}/{sampler}/N={n}");
            report.push(&name, n as f64, "fd", fd, "")?;
            sets.push((name, samples));
        }
    }
    Ok((report.finish(), sets))
}

/// `(euler, N)` and `(rk4, N/4)` for each `N`; every `N` must be a multiple of 4.
pub fn nfe_matched_pairs(euler_steps: &[usize]) -> Result<Vec<(SamplerId, usize)>> {
    let mut out = Vec::new();
    for &n in euler_steps {
        if n == 0 || n % 4 != 0 {
            return Err(Error::config(format!("NFE-matched comparison needs N divisible by 4, got {n}")));
        }
        out.push((SamplerId::Euler, n));
        out.push((SamplerId::Rk4, n / 4));
    }
    Ok(out)
}

/// Fails unless both members of every `(a, b)` pair from
/// [`nfe_matched_pairs`] cost the same number of multiply-accumulates.
pub fn check_equal_cost(config: &BackboneConfig, pairs: &[(SamplerId, usize)]) -> Result<()> {
    for pair in pairs.chunks(2) {
        let [a, b] = pair else {
            return Err(Error::config("cost-matched configurations come in pairs"));
        };
        let (ca, cb) = (energy_proxy(config, a.0, a.1)?, energy_proxy(config, b.0, b.1)?);
        if ca.flops_estimate != cb.flops_estimate {
            return Err(Error::ComparisonInvalid(format!(
                "{}/N={} and {}/N={} differ in cost ({} vs {} MACs)",
                a.0, a.1, b.0, b.1, ca.flops_estimate, cb.flops_estimate
            )));
        }
    }
    Ok(())
}

/// FD against the reference for each solver configuration, plus FD between
/// the sample sets of every pair of configurations with equal NFE. All runs
/// start from the same noise.
pub fn solver_sensitivity<V: Field<f32> + Sync + ?Sized>(
    flow: &V,
    item_shape: &[usize],
    configs: &[(SamplerId, usize)],
    run: &QualityRun<'_>,
) -> Result<(BenchReport, SampleSets)> {
    if configs.is_empty() {
        return Err(Error::config("solver comparison needs at least one configuration"));
    }
    if let Some((s, _)) = configs.iter().find(|(s, _)| s.paradigm() != Paradigm::Flow) {
        return Err(Error::config(format!("solver comparison takes flow samplers, got `{s}`")));
    }
    let mut report = BenchReport::new(Experiment::Solver, run.seed, Environment::current(run.threads), run.timestamp.clone());
    report.feature_space = Some(run.features.space());
    let start = initial_noise::<f32>(item_shape, run.count, run.seed);
    let mut sets: SampleSets = Vec::new();
    let mut nfes = Vec::new();
    for &(sampler, n) in configs {
        let traj = run_sampler(flow, sampler, run.sched, &start, n, run.seed, 0, Record::Endpoints)?;
        let samples = traj.final_state().clone();
        let fd = run.features.distance(&samples, run.reference)?;
        let name = format!("{sampler}/N={n}");
        report.push(&name, traj.nfe as f64, "fd", fd, "")?;
        sets.push((name, samples));
        nfes.push(traj.nfe);
    }
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if nfes[i] == nfes[j] {
                report.pairs.push(PairwiseFd {
                    a: sets[i].0.clone(),
                    b: sets[j].0.clone(),
                    fd: run.features.distance(&sets[i].1, &sets[j].1)?,
                });
            }
        }
    }
    Ok((report.finish(), sets))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub sampler: SamplerId,
    pub steps: usize,
    pub batch: usize,
    pub nfe: usize,
    pub warmup: usize,
    pub reps: usize,
    /// Milliseconds per sample.
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub ms_per_nfe: f64,
    pub warning: Option<String>,
}

/// Linear-interpolated percentile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..20 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Wall-clock latency of one full sampler call (noise draw included),
/// repeated serially after `warmup` discarded runs.
#[allow(clippy::too_many_arguments)]
pub fn measure_latency<V: Field<f32> + ?Sized>(
    field: &V,
    item_shape: &[usize],
    sampler: SamplerId,
    sched: &NoiseSchedule,
    steps: usize,
    batch: usize,
    warmup: usize,
    reps: usize,
) -> Result<LatencyStats> {
    if reps < 3 {
        return Err(Error::config(format!("latency needs at least 3 repetitions, got {reps}")));
    }
    if batch == 0 {
        return Err(Error::config("latency batch must be positive"));
    }
    let mut nfe = 0;
    let mut once = |rep: usize| -> Result<f64> {
        let t0 = Instant::now();
        let start = initial_noise::<f32>(item_shape, batch, rep as u64);
        let traj = run_sampler(field, sampler, sched, &start, steps, rep as u64, 0, Record::Endpoints)?;
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(traj.final_state());
        nfe = traj.nfe;
        Ok(ms / batch as f64)
    };
    for w in 0..warmup {
        once(w)?;
    }
    let mut times = (0..reps).map(|r| once(warmup + r)).collect::<Result<Vec<_>>>()?;
    times.sort_by(f64::total_cmp);
    let median = percentile(&times, 0.5);
    let res_ms = timer_resolution().as_secs_f64() * 1e3 / batch as f64;
    let warning = (res_ms > 0.01 * median).then(|| {
        format!("timer resolution {res_ms:.3e} ms exceeds 1% of the median {median:.3e} ms")
    });
    Ok(LatencyStats {
        sampler,
        steps,
        batch,
        nfe,
        warmup,
        reps,
        median_ms: median,
        p10_ms: percentile(&times, 0.1),
        p90_ms: percentile(&times, 0.9),
        ms_per_nfe: median / nfe.max(1) as f64,
        warning,
    })
}

pub fn latency_report(stats: &[LatencyStats], seed: u64, timestamp: String) -> Result<BenchReport> {
    let mut report = BenchReport::new(Experiment::Latency, seed, Environment::current(1), timestamp);
    for s in stats {
        let name = format!("{}/N={}", s.sampler, s.steps);
        let sweep = s.steps as f64;
        report.push(&name, sweep, "median", s.median_ms, "ms/sample")?;
        report.push(&name, sweep, "p10", s.p10_ms, "ms/sample")?;
        report.push(&name, sweep, "p90", s.p90_ms, "ms/sample")?;
        report.push(&name, sweep, "nfe", s.nfe as f64, "evals")?;
        report.push(&name, sweep, "reps", s.reps as f64, "runs")?;
        if let Some(w) = &s.warning {
            report.warnings.push(format!("{name}: {w}"));
        }
    }
    Ok(report.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyProxy {
    pub nfe: usize,
    /// `nfe` times the multiply-accumulates of one forward pass, per sample.
    pub flops_estimate: u64,
}

pub fn energy_proxy(config: &BackboneConfig, sampler: SamplerId, steps: usize) -> Result<EnergyProxy> {
    let nfe = sampler.nfe(steps);
    Ok(EnergyProxy {
        nfe,
        flops_estimate: nfe as u64 * config.macs_per_forward()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::FnField;
    use crate::schedules::ScheduleParams;

    fn sched() -> NoiseSchedule {
        ScheduleParams::default().build().unwrap()
    }

    #[test]
    fn energy_proxy_counts() {
        let c = BackboneConfig::tiny_unet();
        let e = energy_proxy(&c, SamplerId::Euler, 10).unwrap();
        let a = energy_proxy(&c, SamplerId::Ancestral, 100).unwrap();
        assert_eq!(a.nfe / e.nfe, 10);
        assert_eq!(a.nfe % e.nfe, 0);
        assert_eq!(energy_proxy(&c, SamplerId::Rk4, 10).unwrap().nfe, 40);
        let one = energy_proxy(&c, SamplerId::Euler, 1).unwrap().flops_estimate;
        assert_eq!(e.flops_estimate, 10 * one);
    }

    #[test]
    fn percentiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 0.1), 1.4);
        assert_eq!(percentile(&v, 1.0), 5.0);
    }

    #[test]
    fn stub_latency_is_stable() {
        let f = FnField(|x: &TensorBuf<f32>, _| x.scale(0.5));
        let s = measure_latency(&f, &[64], SamplerId::Euler, &sched(), 20, 1, 2, 3).unwrap();
        assert_eq!(s.nfe, 20);
        assert!(s.p10_ms <= s.median_ms && s.median_ms <= s.p90_ms);
        assert!(s.p90_ms / s.p10_ms < 2.0 || s.warning.is_some());
        assert!(measure_latency(&f, &[4], SamplerId::Euler, &sched(), 2, 1, 0, 2).unwrap_err().is_config());
    }

    #[test]
    fn solvers_agree_on_a_constant_field() {
        let f = FnField(|x: &TensorBuf<f32>, _| TensorBuf::from_fn(x.shape().to_vec(), |i| (i % 3) as f32 - 1.0));
        let reference = initial_noise::<f32>(&[3], 64, 99);
        let run = QualityRun {
            sched: &sched(),
            reference: &reference,
            features: Features::Pixel,
            count: 64,
            seed: 1,
            threads: 1,
            timestamp: FIXED_TIMESTAMP.into(),
        };
        let configs = nfe_matched_pairs(&[8, 16]).unwrap();
        let (report, sets) = solver_sensitivity(&f, &[3], &configs, &run).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.pairs.len(), 2);
        assert!(report.pairs.iter().all(|p| p.fd < 1e-6));
        assert!(sets[0].1.max_abs_diff(&sets[1].1) < 1e-5);
        assert!(report.rows.windows(2).all(|w| w[0].sweep <= w[1].sweep));
        assert!(nfe_matched_pairs(&[10]).unwrap_err().is_config());
    }

    #[test]
    fn ablation_row_count_and_architecture_check() {
        let cfg = BackboneConfig {
            channel_multipliers: vec![16],
            time_embed_dim: 8,
            time_hidden: 8,
            ..BackboneConfig::toy_mlp()
        };
        let flow = Model::<f32>::build(&cfg).unwrap();
        let diff = Model::<f32>::build(&cfg.clone().with_seed(1)).unwrap();
        let reference = initial_noise::<f32>(&[2], 32, 5);
        let s = sched();
        let run = QualityRun {
            sched: &s,
            reference: &reference,
            features: Features::Pixel,
            count: 16,
            seed: 2,
            threads: 1,
            timestamp: FIXED_TIMESTAMP.into(),
        };
        let (report, sets) = step_ablation(&flow, &diff, &[5], &run).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(sets.len(), 2);
        let other = Model::<f32>::build(&BackboneConfig::toy_mlp()).unwrap();
        assert!(matches!(step_ablation(&flow, &other, &[5], &run), Err(Error::ComparisonInvalid(_))));
    }

    #[test]
    fn report_files_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = BenchReport::new(Experiment::Steps, 3, Environment::current(1), FIXED_TIMESTAMP.into());
        r.push("b", 2.0, "fd", 1.5, "").unwrap();
        r.push("a", 1.0, "fd", 0.5, "").unwrap();
        assert!(r.push("c", 3.0, "fd", f64::NAN, "").is_err());
        let r = r.finish();
        assert_eq!(r.rows[0].config, "a");
        r.write(dir.path()).unwrap();
        let first = fs::read(dir.path().join("report.json")).unwrap();
        r.write(dir.path()).unwrap();
        assert_eq!(first, fs::read(dir.path().join("report.json")).unwrap());
        let back: BenchReport = serde_json::from_slice(&first).unwrap();
        assert_eq!(back, r);
    }
}
