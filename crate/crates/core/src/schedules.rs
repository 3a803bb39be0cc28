//! Closed-form forward processes: the variance-preserving diffusion chain and
//! the straight-line interpolant used by rectified flow.
//!
//! Time convention shared by both paradigms: the backbone sees `t ∈ [0, 1]`.
//! Diffusion step `k ∈ 1..=T` maps to `t = k / T`; flow time is used as is,
//! with `t = 0` at noise and `t = 1` at data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, TensorBuf};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        linear_beta_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// β, α and ᾱ tables, all in `f64`. Index `k − 1` holds step `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub params: ScheduleParams,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// ᾱ at step `k`, with ᾱ₀ = 1 for the clean data.
    pub fn alpha_bar_at(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bar[k - 1]
        }
    }

    pub fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::domain(format!(
                "diffusion step {k} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Backbone time for diffusion step `k`.
    pub fn time_of(&self, k: usize) -> f64 {
        step_to_time(k, self.steps())
    }
}

pub fn step_to_time(k: usize, total: usize) -> f64 {
    k as f64 / total as f64
}

/// Linear β from `beta_start` to `beta_end` over `T` steps.
pub fn linear_beta_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        params: ScheduleParams {
            steps,
            beta_start,
            beta_end,
        },
        beta,
        alpha,
        alpha_bar,
    })
}

/// `x_k = √ᾱ_k · x₀ + √(1 − ᾱ_k) · ε`
pub fn diffusion_forward<F: Scalar>(
    x0: &TensorBuf<F>,
    k: usize,
    eps: &TensorBuf<F>,
    sched: &NoiseSchedule,
) -> Result<TensorBuf<F>> {
    sched.check_step(k)?;
    let ab = sched.alpha_bar_at(k);
    let (a, b) = (F::of(ab.sqrt()), F::of((1.0 - ab).sqrt()));
    x0.zip_map(eps, |x, e| a * x + b * e)
}

/// Forward process with one step index per batch item.
pub fn diffusion_forward_batch<F: Scalar>(
    x0: &TensorBuf<F>,
    ks: &[usize],
    eps: &TensorBuf<F>,
    sched: &NoiseSchedule,
) -> Result<TensorBuf<F>> {
    x0.ensure_same_shape(eps)?;
    if ks.len() != x0.batch() {
        return Err(Error::shape(&[x0.batch()], &[ks.len()]));
    }
    let mut out = x0.clone();
    for (i, &k) in ks.iter().enumerate() {
        sched.check_step(k)?;
        let ab = sched.alpha_bar_at(k);
        let (a, b) = (F::of(ab.sqrt()), F::of((1.0 - ab).sqrt()));
        for (o, &e) in out.item_mut(i).iter_mut().zip(eps.item(i)) {
            *o = a * *o + b * e;
        }
    }
    Ok(out)
}

fn check_unit_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("interpolation time {t} outside [0, 1]")));
    }
    Ok(())
}

/// `x_t = t · x₁ + (1 − t) · x₀`
pub fn fm_interpolate<F: Scalar>(x0: &TensorBuf<F>, x1: &TensorBuf<F>, t: f64) -> Result<TensorBuf<F>> {
    check_unit_time(t)?;
    let (a, b) = (F::of(t), F::of(1.0 - t));
    x0.zip_map(x1, |n, d| a * d + b * n)
}

/// Interpolant with one time per batch item.
pub fn fm_interpolate_batch<F: Scalar>(
    x0: &TensorBuf<F>,
    x1: &TensorBuf<F>,
    ts: &[f64],
) -> Result<TensorBuf<F>> {
    x0.ensure_same_shape(x1)?;
    if ts.len() != x0.batch() {
        return Err(Error::shape(&[x0.batch()], &[ts.len()]));
    }
    let mut out = x0.clone();
    for (i, &t) in ts.iter().enumerate() {
        check_unit_time(t)?;
        let (a, b) = (F::of(t), F::of(1.0 - t));
        for (o, &d) in out.item_mut(i).iter_mut().zip(x1.item(i)) {
            *o = a * d + b * *o;
        }
    }
    Ok(out)
}

/// Constant velocity `x₁ − x₀` along the interpolant.
pub fn fm_target_velocity<F: Scalar>(x0: &TensorBuf<F>, x1: &TensorBuf<F>) -> Result<TensorBuf<F>> {
    x1.sub(x0)
}

/// A uniform-stride subsequence of diffusion steps with ᾱ read at the
/// selected steps; per-step β is recomputed from consecutive selected ᾱ.
#[derive(Clone, Debug, PartialEq)]
pub struct Respaced {
    /// Selected steps in increasing order, ending at `T`.
    pub steps: Vec<usize>,
    pub alpha_bar: Vec<f64>,
    pub alpha_bar_prev: Vec<f64>,
}

impl Respaced {
    pub fn new(sched: &NoiseSchedule, count: usize) -> Result<Self> {
        let total = sched.steps();
        if count == 0 || count > total {
            return Err(Error::config(format!(
                "sampling steps {count} outside 1..={total}"
            )));
        }
        let steps: Vec<usize> = (1..=count)
            .map(|j| ((j as f64 * total as f64 / count as f64).round() as usize).clamp(1, total))
            .collect();
        let alpha_bar: Vec<f64> = steps.iter().map(|&k| sched.alpha_bar_at(k)).collect();
        let alpha_bar_prev = std::iter::once(1.0)
            .chain(alpha_bar.iter().copied())
            .take(count)
            .collect();
        Ok(Self {
            steps,
            alpha_bar,
            alpha_bar_prev,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Effective β for the transition from selected index `j` to `j − 1`.
    pub fn beta(&self, j: usize) -> f64 {
        1.0 - self.alpha_bar[j] / self.alpha_bar_prev[j]
    }

    /// Posterior variance β̃ of the respaced chain.
    pub fn posterior_variance(&self, j: usize) -> f64 {
        self.beta(j) * (1.0 - self.alpha_bar_prev[j]) / (1.0 - self.alpha_bar[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_half() {
        let s = linear_beta_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar, vec![0.5]);
    }

    #[test]
    fn zero_betas_rejected() {
        assert!(linear_beta_schedule(10, 0.0, 0.0).unwrap_err().is_config());
        assert!(linear_beta_schedule(10, 0.1, 0.05).unwrap_err().is_config());
        assert!(linear_beta_schedule(10, 0.1, 1.0).unwrap_err().is_config());
        assert!(linear_beta_schedule(0, 0.1, 0.2).unwrap_err().is_config());
    }

    #[test]
    fn default_tables_are_monotone() {
        let s = ScheduleParams::default().build().unwrap();
        assert!(s.beta.windows(2).all(|w| w[0] <= w[1]));
        assert!(s.alpha_bar.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(s.alpha_bar[0], s.alpha[0]);
        assert!(s.beta.iter().all(|&b| b > 0.0 && b < 1.0));
    }

    #[test]
    fn zero_noise_and_zero_signal_cases() {
        let s = ScheduleParams::default().build().unwrap();
        let x0 = TensorBuf::<f64>::from_fn(vec![2, 3], |i| i as f64 - 2.0);
        let zero = TensorBuf::zeros(vec![2, 3]);
        let k = 500;
        let ab = s.alpha_bar_at(k);
        let y = diffusion_forward(&x0, k, &zero, &s).unwrap();
        assert_eq!(y, x0.scale(ab.sqrt()));
        let y = diffusion_forward(&zero, k, &x0, &s).unwrap();
        assert_eq!(y, x0.scale((1.0 - ab).sqrt()));
        assert!(diffusion_forward(&x0, 0, &zero, &s).is_err());
        assert!(diffusion_forward(&x0, 1001, &zero, &s).is_err());
        let wrong = TensorBuf::zeros(vec![3, 2]);
        assert!(matches!(
            diffusion_forward(&x0, 1, &wrong, &s),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn interpolant_cases() {
        let x0 = TensorBuf::<f64>::new(vec![2], vec![0.0, 0.0]).unwrap();
        let x1 = TensorBuf::<f64>::new(vec![2], vec![4.0, 8.0]).unwrap();
        assert_eq!(fm_interpolate(&x0, &x1, 0.25).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(fm_interpolate(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(fm_interpolate(&x0, &x1, 1.0).unwrap(), x1);
        assert!(matches!(fm_interpolate(&x0, &x1, 1.5), Err(Error::Domain(_))));
        let c = TensorBuf::<f64>::full(vec![2], 0.3);
        for t in [0.0, 0.2, 0.7, 1.0] {
            assert!(fm_interpolate(&c, &c, t).unwrap().max_abs_diff(&c) < 1e-15);
        }
    }

    #[test]
    fn target_velocity_is_difference() {
        let x0 = TensorBuf::<f64>::new(vec![2], vec![1.0, 1.0]).unwrap();
        let x1 = TensorBuf::<f64>::new(vec![2], vec![3.0, 0.0]).unwrap();
        assert_eq!(fm_target_velocity(&x0, &x1).unwrap().data(), &[2.0, -1.0]);
        assert_eq!(fm_target_velocity(&x0, &x0).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn respacing_is_uniform_and_ends_at_t() {
        let s = ScheduleParams::default().build().unwrap();
        let r = Respaced::new(&s, 10).unwrap();
        assert_eq!(r.steps, (1..=10).map(|j| 100 * j).collect::<Vec<_>>());
        assert_eq!(r.alpha_bar_prev[0], 1.0);
        assert_eq!(r.alpha_bar_prev[3], s.alpha_bar_at(300));
        let full = Respaced::new(&s, 1000).unwrap();
        for j in 0..1000 {
            assert!((full.beta(j) - s.beta[j]).abs() < 1e-12);
        }
        assert!(Respaced::new(&s, 1001).unwrap_err().is_config());
    }
}
