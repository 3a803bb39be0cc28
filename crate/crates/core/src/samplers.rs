//! Ancestral and DDIM sampling for diffusion models, Euler and RK4
//! integration for flow models, with optional trajectory recording.

use std::cell::Cell;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{Model, Paradigm};
use crate::error::{Error, Result};
use crate::rng::{self, fill_normal, purpose};
use crate::schedules::{NoiseSchedule, Respaced};
use crate::tensor::{Scalar, TensorBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerId {
    Ancestral,
    /// Ancestral update with one noise draw per sample reused at every step.
    AncestralFrozen,
    Ddim,
    Euler,
    Rk4,
}

impl SamplerId {
    pub const ALL: [SamplerId; 5] = [
        SamplerId::Ancestral,
        SamplerId::AncestralFrozen,
        SamplerId::Ddim,
        SamplerId::Euler,
        SamplerId::Rk4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerId::Ancestral => "ancestral",
            SamplerId::AncestralFrozen => "ancestral_frozen",
            SamplerId::Ddim => "ddim",
            SamplerId::Euler => "euler",
            SamplerId::Rk4 => "rk4",
        }
    }

    pub fn paradigm(self) -> Paradigm {
        match self {
            SamplerId::Ancestral | SamplerId::AncestralFrozen | SamplerId::Ddim => Paradigm::Diffusion,
            SamplerId::Euler | SamplerId::Rk4 => Paradigm::Flow,
        }
    }

    /// Network evaluations per sample for `steps` steps.
    pub fn nfe(self, steps: usize) -> usize {
        match self {
            SamplerId::Rk4 => 4 * steps,
            _ => steps,
        }
    }

    pub fn is_deterministic(self) -> bool {
        !matches!(self, SamplerId::Ancestral | SamplerId::AncestralFrozen)
    }
}

impl fmt::Display for SamplerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::config(format!("unknown sampler `{s}` (expected ancestral, ancestral_frozen, ddim, euler or rk4)")))
    }
}

/// Batch-valued function of `(x, t)`: a noise predictor or a velocity field.
/// `t` holds a single time shared by the batch.
pub trait Field<F: Scalar> {
    fn eval(&self, x: &TensorBuf<F>, t: f64) -> Result<TensorBuf<F>>;
}

impl<F: Scalar> Field<F> for Model<F> {
    fn eval(&self, x: &TensorBuf<F>, t: f64) -> Result<TensorBuf<F>> {
        self.forward(x, &[t])
    }
}

/// A field given by a closure.
pub struct FnField<T>(pub T);

impl<F: Scalar, T: Fn(&TensorBuf<F>, f64) -> TensorBuf<F>> Field<F> for FnField<T> {
    fn eval(&self, x: &TensorBuf<F>, t: f64) -> Result<TensorBuf<F>> {
        Ok((self.0)(x, t))
    }
}

/// Wraps a field and counts its evaluations.
pub struct Counted<'a, V: ?Sized> {
    inner: &'a V,
    calls: Cell<usize>,
}

impl<'a, V: ?Sized> Counted<'a, V> {
    pub fn new(inner: &'a V) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<F: Scalar, V: Field<F> + ?Sized> Field<F> for Counted<'_, V> {
    fn eval(&self, x: &TensorBuf<F>, t: f64) -> Result<TensorBuf<F>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.eval(x, t)
    }
}

/// Which states to keep. Integration is unaffected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Record {
    /// Only the initial and final state.
    Endpoints,
    /// Every `n`-th state plus the final one.
    Every(usize),
}

impl Record {
    pub const ALL: Record = Record::Every(1);
}

/// States of a batch along one sampling run. `states[0]` is the initial
/// noise, the last state is the emitted sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<F: Scalar = f32> {
    pub states: Vec<TensorBuf<F>>,
    pub times: Vec<f64>,
    pub sampler: SamplerId,
    pub nfe: usize,
}

struct Recorder<F: Scalar> {
    mode: Record,
    states: Vec<TensorBuf<F>>,
    times: Vec<f64>,
}

impl<F: Scalar> Recorder<F> {
    fn new(mode: Record, x0: &TensorBuf<F>, t0: f64) -> Result<Self> {
        if mode == Record::Every(0) {
            return Err(Error::config("trajectory stride must be positive"));
        }
        Ok(Self {
            mode,
            states: vec![x0.clone()],
            times: vec![t0],
        })
    }

    fn push(&mut self, index: usize, last: bool, x: &TensorBuf<F>, t: f64) {
        let keep = match self.mode {
            Record::Endpoints => last,
            Record::Every(n) => last || index.is_multiple_of(n),
        };
        if keep {
            self.states.push(x.clone());
            self.times.push(t);
        }
    }

    fn finish(self, sampler: SamplerId, nfe: usize) -> Trajectory<F> {
        Trajectory {
            states: self.states,
            times: self.times,
            sampler,
            nfe,
        }
    }
}

impl<F: Scalar> Trajectory<F> {
    pub fn final_state(&self) -> &TensorBuf<F> {
        self.states.last().expect("trajectory has at least two states")
    }

    pub fn batch(&self) -> usize {
        self.states[0].batch()
    }

    /// States of item `i` as `f64` points.
    pub fn item_path(&self, i: usize) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|s| s.item(i).iter().map(|v| v.as_f64()).collect())
            .collect()
    }

    pub fn check(&self) -> Result<()> {
        if self.states.len() < 2 || self.states.len() != self.times.len() {
            return Err(Error::Consistency(format!(
                "{} states for {} times",
                self.states.len(),
                self.times.len()
            )));
        }
        let inc = self.times.windows(2).all(|w| w[1] > w[0]);
        let dec = self.times.windows(2).all(|w| w[1] < w[0]);
        if !(inc || dec) {
            return Err(Error::Consistency("trajectory times are not strictly monotone".into()));
        }
        Ok(())
    }
}

fn integration_check<F: Scalar>(x: &TensorBuf<F>, step: usize) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::Integration { step });
    }
    Ok(())
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::config("step count must be at least 1"));
    }
    Ok(())
}

/// Explicit Euler from `t = 0` to `t = 1` with `h = 1/N`.
pub fn integrate_euler<F: Scalar, V: Field<F> + ?Sized>(
    field: &V,
    x0: &TensorBuf<F>,
    steps: usize,
    record: Record,
) -> Result<Trajectory<F>> {
    check_steps(steps)?;
    let counted = Counted::new(field);
    let h = 1.0 / steps as f64;
    let mut rec = Recorder::new(record, x0, 0.0)?;
    let mut x = x0.clone();
    for i in 0..steps {
        let t = i as f64 / steps as f64;
        let v = counted.eval(&x, t)?;
        x.axpy(F::of(h), &v)?;
        integration_check(&x, i + 1)?;
        rec.push(i + 1, i + 1 == steps, &x, (i + 1) as f64 / steps as f64);
    }
    Ok(rec.finish(SamplerId::Euler, counted.calls()))
}

/// Classical four-stage Runge-Kutta from `t = 0` to `t = 1`.
pub fn integrate_rk4<F: Scalar, V: Field<F> + ?Sized>(
    field: &V,
    x0: &TensorBuf<F>,
    steps: usize,
    record: Record,
) -> Result<Trajectory<F>> {
    check_steps(steps)?;
    let counted = Counted::new(field);
    let h = 1.0 / steps as f64;
    let mut rec = Recorder::new(record, x0, 0.0)?;
    let mut x = x0.clone();
    let half = F::of(h / 2.0);
    for i in 0..steps {
        let t = i as f64 / steps as f64;
        let k1 = counted.eval(&x, t)?;
        let mut y = x.clone();
        y.axpy(half, &k1)?;
        let k2 = counted.eval(&y, t + h / 2.0)?;
        let mut y = x.clone();
        y.axpy(half, &k2)?;
        let k3 = counted.eval(&y, t + h / 2.0)?;
        let mut y = x.clone();
        y.axpy(F::of(h), &k3)?;
        let k4 = counted.eval(&y, t + h)?;
        let sixth = F::of(h / 6.0);
        let two = F::of(2.0);
        for (j, xv) in x.data_mut().iter_mut().enumerate() {
            *xv += sixth * (k1.data()[j] + two * k2.data()[j] + two * k3.data()[j] + k4.data()[j]);
        }
        integration_check(&x, i + 1)?;
        rec.push(i + 1, i + 1 == steps, &x, (i + 1) as f64 / steps as f64);
    }
    Ok(rec.finish(SamplerId::Rk4, counted.calls()))
}

fn respace(sched: &NoiseSchedule, steps: usize) -> Result<Respaced> {
    if steps > sched.steps() {
        return Err(Error::config(format!(
            "{steps} sampling steps exceed the {} diffusion steps",
            sched.steps()
        )));
    }
    check_steps(steps)?;
    Respaced::new(sched, steps)
}

/// Source of the `z` draws in ancestral sampling. Item `i` of the batch
/// reads stream `(seed, SAMPLE_NOISE + first_item + i)`.
#[derive(Clone, Copy, Debug)]
pub struct AncestralNoise {
    pub seed: u64,
    /// Draw one `z` per item and reuse it at every step.
    pub frozen: bool,
    pub first_item: u64,
}

impl AncestralNoise {
    pub fn fresh(seed: u64) -> Self {
        Self {
            seed,
            frozen: false,
            first_item: 0,
        }
    }

    pub fn frozen(seed: u64) -> Self {
        Self {
            seed,
            frozen: true,
            first_item: 0,
        }
    }
}

/// Reverse chain `x_{k−1} = (x_k − β_k/√(1−ᾱ_k)·ε)/√α_k + σ_k z`, `σ_k² = β̃_k`,
/// with `z = 0` on the last step. Runs on a uniform-stride subsequence when
/// `steps < T`.
pub fn sample_ancestral<F: Scalar, V: Field<F> + ?Sized>(
    eps_model: &V,
    sched: &NoiseSchedule,
    x_t: &TensorBuf<F>,
    steps: usize,
    noise: AncestralNoise,
    record: Record,
) -> Result<Trajectory<F>> {
    let rs = respace(sched, steps)?;
    let counted = Counted::new(eps_model);
    let total = sched.steps();
    let batch = x_t.batch();
    let frozen = noise.frozen;
    let mut streams: Vec<_> = (0..batch)
        .map(|i| rng::stream(noise.seed, purpose::SAMPLE_NOISE + noise.first_item + i as u64))
        .collect();
    let mut z = TensorBuf::<F>::zeros(x_t.shape().to_vec());
    if frozen {
        for (i, s) in streams.iter_mut().enumerate() {
            fill_normal(s, z.item_mut(i));
        }
    }
    let mut rec = Recorder::new(record, x_t, rs.steps[steps - 1] as f64 / total as f64)?;
    let mut x = x_t.clone();
    for (n, j) in (0..steps).rev().enumerate() {
        let t = rs.steps[j] as f64 / total as f64;
        let eps = counted.eval(&x, t)?;
        let ab = rs.alpha_bar[j];
        let beta = rs.beta(j);
        let coef = F::of(beta / (1.0 - ab).sqrt());
        let inv_sqrt_alpha = F::of(1.0 / (1.0 - beta).sqrt());
        for (xv, &e) in x.data_mut().iter_mut().zip(eps.data()) {
            *xv = (*xv - coef * e) * inv_sqrt_alpha;
        }
        if j > 0 {
            if !frozen {
                for (i, s) in streams.iter_mut().enumerate() {
                    fill_normal(s, z.item_mut(i));
                }
            }
            x.axpy(F::of(rs.posterior_variance(j).sqrt()), &z)?;
        }
        integration_check(&x, n + 1)?;
        let t_next = if j > 0 { rs.steps[j - 1] as f64 / total as f64 } else { 0.0 };
        rec.push(n + 1, j == 0, &x, t_next);
    }
    let id = if frozen { SamplerId::AncestralFrozen } else { SamplerId::Ancestral };
    Ok(rec.finish(id, counted.calls()))
}

/// Deterministic (η = 0) update through the predicted clean sample
/// `x̂₀ = (x_k − √(1−ᾱ_k)·ε)/√ᾱ_k`.
pub fn sample_ddim<F: Scalar, V: Field<F> + ?Sized>(
    eps_model: &V,
    sched: &NoiseSchedule,
    x_t: &TensorBuf<F>,
    steps: usize,
    record: Record,
) -> Result<Trajectory<F>> {
    let rs = respace(sched, steps)?;
    let counted = Counted::new(eps_model);
    let total = sched.steps();
    let mut rec = Recorder::new(record, x_t, rs.steps[steps - 1] as f64 / total as f64)?;
    let mut x = x_t.clone();
    for (n, j) in (0..steps).rev().enumerate() {
        let t = rs.steps[j] as f64 / total as f64;
        let eps = counted.eval(&x, t)?;
        let (ab, ab_prev) = (rs.alpha_bar[j], rs.alpha_bar_prev[j]);
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        for (xv, &e) in x.data_mut().iter_mut().zip(eps.data()) {
            let e = e.as_f64();
            let x0 = (xv.as_f64() - sb * e) / sa;
            *xv = F::of(pa * x0 + pb * e);
        }
        integration_check(&x, n + 1)?;
        let t_next = if j > 0 { rs.steps[j - 1] as f64 / total as f64 } else { 0.0 };
        rec.push(n + 1, j == 0, &x, t_next);
    }
    Ok(rec.finish(SamplerId::Ddim, counted.calls()))
}

/// Initial state for `count` samples; item `i` reads stream `(seed, SAMPLE_START + i)`.
pub fn initial_noise<F: Scalar>(item_shape: &[usize], count: usize, seed: u64) -> TensorBuf<F> {
    let mut shape = vec![count];
    shape.extend_from_slice(item_shape);
    rng::normal_per_item(seed, purpose::SAMPLE_START, &shape)
}

/// Runs one sampler on a given start state. `first_item` is the global
/// index of the batch's first item, used to key ancestral noise streams.
#[allow(clippy::too_many_arguments)]
pub fn run_sampler<F: Scalar, V: Field<F> + ?Sized>(
    field: &V,
    sampler: SamplerId,
    sched: &NoiseSchedule,
    start: &TensorBuf<F>,
    steps: usize,
    seed: u64,
    first_item: u64,
    record: Record,
) -> Result<Trajectory<F>> {
    let noise = |frozen| AncestralNoise {
        seed,
        frozen,
        first_item,
    };
    match sampler {
        SamplerId::Ancestral => sample_ancestral(field, sched, start, steps, noise(false), record),
        SamplerId::AncestralFrozen => sample_ancestral(field, sched, start, steps, noise(true), record),
        SamplerId::Ddim => sample_ddim(field, sched, start, steps, record),
        SamplerId::Euler => integrate_euler(field, start, steps, record),
        SamplerId::Rk4 => integrate_rk4(field, start, steps, record),
    }
}

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub sampler: SamplerId,
    pub steps: usize,
    pub count: usize,
    pub seed: u64,
    /// `None` skips trajectory storage beyond the endpoints.
    pub record: Option<Record>,
    /// Worker threads; samples split into contiguous chunks.
    pub threads: usize,
}

#[derive(Clone, Debug)]
pub struct Generated {
    /// Raw final states, not clamped.
    pub samples: TensorBuf<f32>,
    pub trajectory: Option<Trajectory<f32>>,
    pub nfe: usize,
}

pub fn check_compatible(paradigm: Paradigm, sampler: SamplerId) -> Result<()> {
    if sampler.paradigm() != paradigm {
        return Err(Error::config(format!(
            "sampler `{sampler}` needs a {} model, checkpoint is {paradigm}",
            sampler.paradigm()
        )));
    }
    Ok(())
}

/// Draws seeded noise and runs the sampler. Item `i` depends only on the seed
/// and `i`, so the thread count never changes the result.
pub fn generate(
    model: &Model<f32>,
    paradigm: Paradigm,
    sched: &NoiseSchedule,
    opts: &GenerateOptions,
) -> Result<Generated> {
    check_compatible(paradigm, opts.sampler)?;
    let shape = model.config().in_shape.clone();
    if opts.count == 0 {
        return Ok(Generated {
            samples: TensorBuf::zeros(model.config().batch_shape(0)),
            trajectory: None,
            nfe: 0,
        });
    }
    let start = initial_noise::<f32>(&shape, opts.count, opts.seed);
    let record = opts.record.unwrap_or(Record::Endpoints);
    let threads = opts.threads.clamp(1, opts.count);
    let traj = if threads == 1 {
        run_sampler(model, opts.sampler, sched, &start, opts.steps, opts.seed, 0, record)?
    } else {
        let chunk = opts.count.div_ceil(threads);
        let parts: Vec<Result<Trajectory<f32>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..opts.count)
                .step_by(chunk)
                .map(|lo| {
                    let hi = (lo + chunk).min(opts.count);
                    let part = start.slice_batch(lo, hi);
                    s.spawn(move || run_sampler(model, opts.sampler, sched, &part, opts.steps, opts.seed, lo as u64, record))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sampler thread panicked")).collect()
        });
        merge(parts.into_iter().collect::<Result<Vec<_>>>()?)?
    };
    traj.check()?;
    Ok(Generated {
        samples: traj.final_state().clone(),
        nfe: traj.nfe,
        trajectory: opts.record.map(|_| traj),
    })
}

fn merge(parts: Vec<Trajectory<f32>>) -> Result<Trajectory<f32>> {
    let first = &parts[0];
    let mut states = Vec::with_capacity(first.states.len());
    for s in 0..first.states.len() {
        let pieces: Vec<&TensorBuf<f32>> = parts.iter().map(|p| &p.states[s]).collect();
        states.push(TensorBuf::concat_batch(&pieces)?);
    }
    Ok(Trajectory {
        states,
        times: first.times.clone(),
        sampler: first.sampler,
        nfe: first.nfe,
    })
}

#[derive(Serialize, Deserialize)]
struct TrajectoryManifest {
    sampler_id: SamplerId,
    nfe: usize,
    times: Vec<f64>,
    state_shape: Vec<usize>,
    dtype: String,
    blob: String,
}

fn blob_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".bin");
    PathBuf::from(p)
}

/// Writes a JSON manifest at `path` and the states as little-endian `f32`
/// at `path` + `.bin`, state after state.
pub fn save_trajectory(traj: &Trajectory<f32>, path: impl AsRef<Path>) -> Result<()> {
    traj.check()?;
    let path = path.as_ref();
    let blob = blob_path(path);
    let manifest = TrajectoryManifest {
        sampler_id: traj.sampler,
        nfe: traj.nfe,
        times: traj.times.clone(),
        state_shape: traj.states[0].shape().to_vec(),
        dtype: "f32le".into(),
        blob: blob.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let mut bytes = Vec::with_capacity(4 * traj.states.len() * traj.states[0].len());
    for s in &traj.states {
        for v in s.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory<f32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: TrajectoryManifest = serde_json::from_str(&text)?;
    if m.dtype != "f32le" {
        return Err(Error::Format(format!("unsupported trajectory dtype `{}`", m.dtype)));
    }
    let blob = path.with_file_name(&m.blob);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let per_state: usize = m.state_shape.iter().product();
    let expected = 4 * per_state * m.times.len();
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let states = values
        .chunks_exact(per_state.max(1))
        .take(m.times.len())
        .map(|c| TensorBuf::new(m.state_shape.clone(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let traj = Trajectory {
        states,
        times: m.times,
        sampler: m.sampler_id,
        nfe: m.nfe,
    };
    traj.check()?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedules::{linear_beta_schedule, ScheduleParams};

    fn x0() -> TensorBuf<f64> {
        TensorBuf::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.25, -1.0]).unwrap()
    }

    fn linear() -> FnField<impl Fn(&TensorBuf<f64>, f64) -> TensorBuf<f64>> {
        FnField(|x: &TensorBuf<f64>, _| x.clone())
    }

    #[test]
    fn constant_field_is_exact() {
        let c = TensorBuf::new(vec![2, 3], vec![0.5, 1.0, -1.0, 2.0, 0.0, 3.0]).unwrap();
        let cc = c.clone();
        let field = FnField(move |_: &TensorBuf<f64>, _| cc.clone());
        for n in [1, 3, 7] {
            for traj in [
                integrate_euler(&field, &x0(), n, Record::ALL).unwrap(),
                integrate_rk4(&field, &x0(), n, Record::ALL).unwrap(),
            ] {
                let want = x0().add(&c).unwrap();
                assert!(traj.final_state().max_abs_diff(&want) < 1e-12);
            }
        }
    }

    #[test]
    fn euler_on_linear_field() {
        let t = integrate_euler(&linear(), &x0(), 1, Record::ALL).unwrap();
        assert_eq!(t.final_state(), &x0().scale(2.0));
        let t = integrate_euler(&linear(), &x0(), 10, Record::ALL).unwrap();
        let want = x0().scale(1.1f64.powi(10));
        assert!(t.final_state().max_abs_diff(&want) < 1e-12);
        assert_eq!(t.nfe, 10);
        assert_eq!(t.times.len(), 11);
        assert_eq!(t.times[10], 1.0);
        assert!((t.times[3] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rk4_single_step_is_the_taylor_polynomial() {
        let t = integrate_rk4(&linear(), &x0(), 1, Record::ALL).unwrap();
        let want = x0().scale(65.0 / 24.0);
        assert!(t.final_state().max_abs_diff(&want) < 1e-12);
        assert_eq!(t.nfe, 4);
        let t = integrate_rk4(&linear(), &x0(), 10, Record::ALL).unwrap();
        for (a, b) in t.final_state().data().iter().zip(x0().data()) {
            assert!((a - std::f64::consts::E * b).abs() / b.abs() < 3e-6);
        }
        assert_eq!(t.nfe, 40);
    }

    fn decay_error(rk4: bool, n: usize) -> f64 {
        let f = FnField(|x: &TensorBuf<f64>, _| x.scale(-1.0));
        let start = TensorBuf::new(vec![1, 1], vec![1.0]).unwrap();
        let t = if rk4 {
            integrate_rk4(&f, &start, n, Record::Endpoints).unwrap()
        } else {
            integrate_euler(&f, &start, n, Record::Endpoints).unwrap()
        };
        (t.final_state().data()[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn convergence_orders() {
        for w in [10, 20, 40].windows(2) {
            let e = decay_error(false, w[0]) / decay_error(false, w[1]);
            assert!((e / 2.0 - 1.0).abs() <= 0.3, "euler ratio {e}");
            let r = decay_error(true, w[0]) / decay_error(true, w[1]);
            assert!((r / 16.0 - 1.0).abs() <= 0.3, "rk4 ratio {r}");
        }
    }

    #[test]
    fn non_finite_state_names_the_step() {
        let f = FnField(|x: &TensorBuf<f64>, t: f64| if t >= 0.5 { x.map(|_| f64::NAN) } else { x.clone() });
        match integrate_euler(&f, &x0(), 4, Record::ALL) {
            Err(Error::Integration { step }) => assert_eq!(step, 3),
            other => panic!("{other:?}"),
        }
    }

    fn zero_eps() -> FnField<impl Fn(&TensorBuf<f64>, f64) -> TensorBuf<f64>> {
        FnField(|x: &TensorBuf<f64>, _| TensorBuf::zeros(x.shape().to_vec()))
    }

    #[test]
    fn ddim_with_zero_noise_prediction_rescales() {
        // ε ≡ 0 gives x_{k−1} = √(ᾱ_{k−1}/ᾱ_k)·x_k, so x_0 = x_T / √ᾱ_T.
        let sched = linear_beta_schedule(4, 0.1, 0.4).unwrap();
        let ab: f64 = [0.9f64, 0.8, 0.7, 0.6].iter().product();
        let t = sample_ddim(&zero_eps(), &sched, &x0(), 4, Record::ALL).unwrap();
        assert!(t.final_state().max_abs_diff(&x0().scale(1.0 / ab.sqrt())) < 1e-12);
        assert_eq!(t.nfe, 4);
        assert_eq!(t.times, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        let again = sample_ddim(&zero_eps(), &sched, &x0(), 4, Record::ALL).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn ancestral_with_tiny_betas_barely_moves() {
        let sched = linear_beta_schedule(4, 1e-8, 1e-8).unwrap();
        let t = sample_ancestral(&zero_eps(), &sched, &x0(), 4, AncestralNoise::fresh(3), Record::ALL).unwrap();
        assert!(t.final_state().max_abs_diff(&x0()) < 1e-3);
        let again = sample_ancestral(&zero_eps(), &sched, &x0(), 4, AncestralNoise::fresh(3), Record::ALL).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn too_many_diffusion_steps_is_a_config_error() {
        let sched = linear_beta_schedule(4, 0.1, 0.4).unwrap();
        assert!(sample_ddim(&zero_eps(), &sched, &x0(), 5, Record::ALL).unwrap_err().is_config());
        assert!(integrate_euler(&zero_eps(), &x0(), 0, Record::ALL).unwrap_err().is_config());
    }

    #[test]
    fn nfe_matches_counted_calls() {
        let sched = ScheduleParams::default().build().unwrap();
        for id in SamplerId::ALL {
            for n in [1, 7, 10] {
                let f = zero_eps();
                let counted = Counted::new(&f);
                let t = run_sampler(&counted, id, &sched, &x0(), n, 1, 0, Record::Endpoints).unwrap();
                assert_eq!(counted.calls(), id.nfe(n), "{id} {n}");
                assert_eq!(t.nfe, id.nfe(n));
                assert_eq!(t.states.len(), 2);
                t.check().unwrap();
            }
        }
    }

    #[test]
    fn stride_subsamples_without_changing_the_result() {
        let full = integrate_euler(&linear(), &x0(), 10, Record::ALL).unwrap();
        let sub = integrate_euler(&linear(), &x0(), 10, Record::Every(3)).unwrap();
        assert_eq!(sub.times.len(), 5);
        assert_eq!(full.final_state(), sub.final_state());
    }

    #[test]
    fn trajectory_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let field = FnField(|x: &TensorBuf<f32>, t: f64| x.scale(t as f32));
        let start = TensorBuf::from_fn(vec![3, 2], |i| i as f32 - 2.5);
        let t = integrate_rk4(&field, &start, 5, Record::ALL).unwrap();
        let p = dir.path().join("run.traj");
        save_trajectory(&t, &p).unwrap();
        assert!(dir.path().join("run.traj.bin").exists());
        assert_eq!(load_trajectory(&p).unwrap(), t);
        let blob = dir.path().join("run.traj.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_trajectory(&p), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn generation_ignores_thread_count() {
        let cfg = crate::backbone::BackboneConfig::toy_mlp();
        let mut model = Model::<f32>::build(&cfg).unwrap();
        for id in model.output_param_ids() {
            let shape = model.params().tensor(id).shape().to_vec();
            *model.params_mut().tensor_mut(id) = rng::normal_per_item(4, id as u64, &shape).scale(0.1);
        }
        let sched = ScheduleParams::default().build().unwrap();
        for (sampler, paradigm) in [(SamplerId::Ancestral, Paradigm::Diffusion), (SamplerId::Euler, Paradigm::Flow)] {
            let opts = |threads| GenerateOptions {
                sampler,
                steps: 5,
                count: 7,
                seed: 11,
                record: Some(Record::ALL),
                threads,
            };
            let a = generate(&model, paradigm, &sched, &opts(1)).unwrap();
            let b = generate(&model, paradigm, &sched, &opts(3)).unwrap();
            assert_eq!(a.samples, b.samples);
            assert_eq!(a.trajectory, b.trajectory);
            let traj = a.trajectory.unwrap();
            assert_eq!(traj.final_state(), &a.samples);
        }
    }

    #[test]
    fn generate_checks_paradigm_and_empty_count() {
        let model = Model::<f32>::build(&crate::backbone::BackboneConfig::toy_mlp()).unwrap();
        let sched = ScheduleParams::default().build().unwrap();
        let mut opts = GenerateOptions {
            sampler: SamplerId::Ddim,
            steps: 5,
            count: 4,
            seed: 1,
            record: None,
            threads: 1,
        };
        assert!(generate(&model, Paradigm::Flow, &sched, &opts).unwrap_err().is_config());
        opts.count = 0;
        let g = generate(&model, Paradigm::Diffusion, &sched, &opts).unwrap();
        assert_eq!(g.samples.batch(), 0);
        assert_eq!(g.nfe, 0);
    }
}
