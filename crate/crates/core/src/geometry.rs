//! Path geometry of sampling trajectories: straightness, kinetic energy,
//! second differences, plus the plane projection of a velocity field and
//! latent interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use crate::samplers::{run_sampler, Field, Record, SamplerId, Trajectory};
use crate::schedules::NoiseSchedule;
use crate::tensor::{dist_f64, Scalar, TensorBuf};

/// Chord norms below this make the straightness ratio undefined.
pub const CHORD_EPS: f64 = 1e-8;
pub const HISTOGRAM_BINS: usize = 30;

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Path length over chord length for one item's states.
pub fn straightness(path: &[Vec<f64>]) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::Analysis(format!("path has {} states, need at least 2", path.len())));
    }
    let chord = diff_norm(&path[path.len() - 1], &path[0]);
    if chord < CHORD_EPS {
        return Err(Error::Degenerate { chord });
    }
    let length: f64 = path.windows(2).map(|w| diff_norm(&w[1], &w[0])).sum();
    Ok(length / chord)
}

fn check_times(path_len: usize, times: &[f64]) -> Result<()> {
    if times.len() != path_len {
        return Err(Error::Consistency(format!("{path_len} states for {} times", times.len())));
    }
    let inc = times.windows(2).all(|w| w[1] > w[0]);
    let dec = times.windows(2).all(|w| w[1] < w[0]);
    if !(inc || dec) {
        return Err(Error::domain("trajectory times must be strictly monotone"));
    }
    Ok(())
}

/// `Σ ‖x_i − x_{i−1}‖² / |t_i − t_{i−1}|`. Decreasing time (diffusion
/// trajectories run from t = 1 down to 0) uses the absolute step.
pub fn kinetic_energy(path: &[Vec<f64>], times: &[f64]) -> Result<f64> {
    check_times(path.len(), times)?;
    Ok(path
        .windows(2)
        .zip(times.windows(2))
        .map(|(p, t)| {
            let d = diff_norm(&p[1], &p[0]);
            d * d / (t[1] - t[0]).abs()
        })
        .sum())
}

/// Mean of `‖x_{i+1} − 2x_i + x_{i−1}‖ / h²` over interior states.
pub fn second_derivative(path: &[Vec<f64>], times: &[f64]) -> Result<f64> {
    check_times(path.len(), times)?;
    if path.len() < 3 {
        return Err(Error::Analysis("second differences need at least 3 states".into()));
    }
    let h = (times[1] - times[0]).abs();
    let uniform = times
        .windows(2)
        .all(|w| ((w[1] - w[0]).abs() - h).abs() <= 1e-9 * h.max(1.0));
    if !uniform {
        return Err(Error::domain("second differences need uniformly spaced times"));
    }
    let total: f64 = path
        .windows(3)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .zip(&w[2])
                .map(|((a, b), c)| {
                    let d = c - 2.0 * b + a;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / (path.len() - 2) as f64 / (h * h))
}

pub fn straightness_ratio<F: Scalar>(traj: &Trajectory<F>, item: usize) -> Result<f64> {
    straightness(&traj.item_path(item))
}

/// Per-item metrics for every item of a recorded batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub index: usize,
    /// `None` when the chord is degenerate.
    pub straightness: Option<f64>,
    pub kinetic_energy: f64,
    pub second_derivative: Option<f64>,
}

pub fn path_metrics<F: Scalar>(traj: &Trajectory<F>) -> Result<Vec<PathMetrics>> {
    (0..traj.batch())
        .map(|i| {
            let path = traj.item_path(i);
            let straightness = match straightness(&path) {
                Ok(c) => Some(c),
                Err(Error::Degenerate { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(PathMetrics {
                index: i,
                straightness,
                kinetic_energy: kinetic_energy(&path, &traj.times)?,
                second_derivative: second_derivative(&path, &traj.times).ok(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Uniform bins over `[lo, hi]`; values outside are clamped into the end bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
        counts[(b.max(0.0) as usize).min(bins - 1)] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureStats {
    pub sampler: SamplerId,
    pub steps: usize,
    /// Trajectories generated, including degenerate ones.
    pub n: usize,
    pub degenerate: usize,
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
    pub metrics: Vec<PathMetrics>,
}

impl CurvatureStats {
    pub fn from_metrics(sampler: SamplerId, steps: usize, metrics: Vec<PathMetrics>) -> Result<Self> {
        let samples: Vec<f64> = metrics.iter().filter_map(|m| m.straightness).collect();
        if samples.is_empty() {
            return Err(Error::Analysis(format!("all {} trajectories are degenerate", metrics.len())));
        }
        let k = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / k;
        let var = if samples.len() > 1 {
            samples.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            sampler,
            steps,
            n: metrics.len(),
            degenerate: metrics.len() - samples.len(),
            histogram: histogram(&samples, 1.0, max.max(1.0), HISTOGRAM_BINS),
            samples,
            mean,
            std: var.sqrt(),
            min,
            max,
            metrics,
        })
    }

    pub fn standard_error(&self) -> f64 {
        self.std / (self.samples.len() as f64).sqrt()
    }

    /// Per-trajectory rows: `index,straightness,kinetic_energy,second_derivative`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("index,straightness,kinetic_energy,second_derivative\n");
        for m in &self.metrics {
            s.push_str(&format!(
                "{},{},{},{}\n",
                m.index,
                opt(m.straightness),
                m.kinetic_energy,
                opt(m.second_derivative)
            ));
        }
        s
    }
}

/// Samples `n` full trajectories (item `i` seeded by `(seed, i)`) and
/// summarizes their straightness.
pub fn curvature_stats<V: Field<f32> + ?Sized>(
    field: &V,
    item_shape: &[usize],
    sampler: SamplerId,
    sched: &NoiseSchedule,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<CurvatureStats> {
    if n < 2 {
        return Err(Error::config(format!("curvature statistics need n >= 2, got {n}")));
    }
    let start = crate::samplers::initial_noise::<f32>(item_shape, n, seed);
    let traj = run_sampler(field, sampler, sched, &start, steps, seed, 0, Record::ALL)?;
    CurvatureStats::from_metrics(sampler, steps, path_metrics(&traj)?)
}

/// Pooled two-sample gap `(mean_b − mean_a) / √(se_a² + se_b²)`.
pub fn separation(a: &CurvatureStats, b: &CurvatureStats) -> f64 {
    let se = (a.standard_error().powi(2) + b.standard_error().powi(2)).sqrt();
    (b.mean - a.mean) / se
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneProjection {
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    /// Midpoint of the start and end states.
    pub origin: Vec<f64>,
    /// `(u, v)` coordinates, row-major with `v` outermost.
    pub grid: Vec<(f64, f64)>,
    /// `(⟨f, e₁⟩, ⟨f, e₂⟩)` at each grid point.
    pub arrows: Vec<(f64, f64)>,
    pub grid_res: usize,
    pub t_eval: f64,
    /// Plane coordinates of the start and end states.
    pub start_uv: (f64, f64),
    pub end_uv: (f64, f64),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `e₁` along `x_end − x_start`, `e₂` a seeded random direction made
/// orthogonal to `e₁`.
pub fn plane_basis(x_start: &[f64], x_end: &[f64], seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if x_start.len() != x_end.len() {
        return Err(Error::shape(&[x_start.len()], &[x_end.len()]));
    }
    let d: Vec<f64> = x_end.iter().zip(x_start).map(|(a, b)| a - b).collect();
    let norm = dot(&d, &d).sqrt();
    if norm < CHORD_EPS {
        return Err(Error::Degenerate { chord: norm });
    }
    let e1: Vec<f64> = d.iter().map(|v| v / norm).collect();
    let mut r = rng::stream(seed, purpose::PROJECTION);
    for _ in 0..8 {
        let mut e2: Vec<f64> = (0..e1.len()).map(|_| rng::normal::<f64>(&mut r)).collect();
        let p = dot(&e2, &e1);
        e2.iter_mut().zip(&e1).for_each(|(v, u)| *v -= p * u);
        let n2 = dot(&e2, &e2).sqrt();
        if n2 > 1e-6 {
            e2.iter_mut().for_each(|v| *v /= n2);
            return Ok((e1, e2));
        }
    }
    Err(Error::Analysis("space is one-dimensional; no second basis vector".into()))
}

/// Projects `field(·, t_eval)` onto the plane through `x_start` and `x_end`
/// over a `grid_res × grid_res` lattice with `|u|, |v| ≤ extent·‖x_end − x_start‖`.
pub fn project_field<V: Field<f32> + ?Sized>(
    field: &V,
    x_start: &TensorBuf<f32>,
    x_end: &TensorBuf<f32>,
    grid_res: usize,
    extent: f64,
    t_eval: f64,
    seed: u64,
) -> Result<PlaneProjection> {
    x_start.ensure_same_shape(x_end)?;
    if grid_res < 2 || extent.is_nan() || extent <= 0.0 {
        return Err(Error::config("plane projection needs grid_res >= 2 and extent > 0"));
    }
    let a: Vec<f64> = x_start.data().iter().map(|v| *v as f64).collect();
    let b: Vec<f64> = x_end.data().iter().map(|v| *v as f64).collect();
    let (e1, e2) = plane_basis(&a, &b, seed)?;
    let origin: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
    let half = extent * dist_f64(x_end.data(), x_start.data());
    let coord = |i: usize| -half + 2.0 * half * i as f64 / (grid_res - 1) as f64;
    let mut grid = Vec::with_capacity(grid_res * grid_res);
    for j in 0..grid_res {
        for i in 0..grid_res {
            grid.push((coord(i), coord(j)));
        }
    }
    let dim = a.len();
    let mut shape = vec![grid.len()];
    shape.extend_from_slice(&x_start.shape()[1..]);
    let points = TensorBuf::from_fn(shape, |idx| {
        let (p, k) = (idx / dim, idx % dim);
        let (u, v) = grid[p];
        (origin[k] + u * e1[k] + v * e2[k]) as f32
    });
    let vel = field.eval(&points, t_eval)?;
    let arrows = (0..grid.len())
        .map(|p| {
            let f: Vec<f64> = vel.item(p).iter().map(|v| *v as f64).collect();
            (dot(&f, &e1), dot(&f, &e2))
        })
        .collect();
    let uv = |x: &[f64]| {
        let r: Vec<f64> = x.iter().zip(&origin).map(|(p, o)| p - o).collect();
        (dot(&r, &e1), dot(&r, &e2))
    };
    Ok(PlaneProjection {
        start_uv: uv(&a),
        end_uv: uv(&b),
        e1,
        e2,
        origin,
        grid,
        arrows,
        grid_res,
        t_eval,
    })
}

/// Samples generated from `(1 − λ)·z_a + λ·z_b` for `K + 2` evenly spaced λ
/// including both ends. `z_a` and `z_b` are single items (`[1, ...]`).
#[allow(clippy::too_many_arguments)]
pub fn latent_interpolation<V: Field<f32> + ?Sized>(
    field: &V,
    z_a: &TensorBuf<f32>,
    z_b: &TensorBuf<f32>,
    k: usize,
    sampler: SamplerId,
    sched: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<TensorBuf<f32>> {
    z_a.ensure_same_shape(z_b)?;
    if z_a.batch() != 1 {
        return Err(Error::shape(&[1], &z_a.shape()[..1]));
    }
    let frames = k + 2;
    let mut shape = z_a.shape().to_vec();
    shape[0] = frames;
    let n = z_a.len();
    let latents = TensorBuf::from_fn(shape, |idx| {
        let (f, j) = (idx / n, idx % n);
        if f == 0 {
            z_a.data()[j]
        } else if f == frames - 1 {
            z_b.data()[j]
        } else {
            let lam = f as f32 / (frames - 1) as f32;
            (1.0 - lam) * z_a.data()[j] + lam * z_b.data()[j]
        }
    });
    let traj = run_sampler(field, sampler, sched, &latents, steps, seed, 0, Record::Endpoints)?;
    Ok(traj.final_state().clone())
}

/// Mean absolute difference between consecutive frames.
pub fn frame_differences(frames: &TensorBuf<f32>) -> Vec<f64> {
    (1..frames.batch())
        .map(|i| {
            let (a, b) = (frames.item(i - 1), frames.item(i));
            a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::FnField;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn pts(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn collinear_path_is_straight() {
        let p = pts(&[&[0.0, 0.0], &[0.5, 1.0], &[1.0, 2.0], &[3.0, 6.0]]);
        assert_eq!(straightness(&p).unwrap(), 1.0);
    }

    #[test]
    fn right_angle_is_root_two() {
        let p = pts(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0]]);
        assert!((straightness(&p).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(kinetic_energy(&p, &[0.0, 0.5, 1.0]).unwrap(), 4.0);
    }

    #[test]
    fn closed_loop_is_degenerate() {
        let p = pts(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(straightness(&p), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn energy_of_straight_and_stationary_paths() {
        let d = [1.5, -2.0, 0.5];
        let n = 8;
        let p: Vec<Vec<f64>> = (0..=n).map(|i| d.iter().map(|v| v * i as f64 / n as f64).collect()).collect();
        let t: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let e = kinetic_energy(&p, &t).unwrap();
        assert!((e - d.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
        let still = vec![vec![1.0, 2.0]; 4];
        assert_eq!(kinetic_energy(&still, &[0.0, 0.2, 0.4, 1.0]).unwrap(), 0.0);
        assert!(kinetic_energy(&still, &[0.0, 0.2, 0.2, 1.0]).unwrap_err().to_string().contains("monotone"));
    }

    #[test]
    fn second_differences() {
        let t: Vec<f64> = (0..=4).map(|i| i as f64 * 0.25).collect();
        let quad: Vec<Vec<f64>> = t.iter().map(|s| vec![s * s]).collect();
        assert!((second_derivative(&quad, &t).unwrap() - 2.0).abs() < 1e-12);
        let lin: Vec<Vec<f64>> = t.iter().map(|s| vec![3.0 * s, -s]).collect();
        assert!(second_derivative(&lin, &t).unwrap() < 1e-12);
        assert!(matches!(second_derivative(&lin, &[0.0, 0.1, 0.5, 0.7, 1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn histogram_conserves_counts() {
        let h = histogram(&[1.0, 1.2, 2.0, 0.999_999_999_9, 1.5], 1.0, 2.0, 30);
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        assert_eq!(h.edges.len(), 31);
        assert_eq!(h.counts[29], 1);
    }

    #[test]
    fn constant_velocity_stub_is_perfectly_straight() {
        // Each item moves with its own constant velocity.
        let field = FnField(|x: &TensorBuf<f32>, _| {
            TensorBuf::from_fn(x.shape().to_vec(), |i| (i % 5) as f32 + 1.0)
        });
        let sched = crate::schedules::ScheduleParams::default().build().unwrap();
        let s = curvature_stats(&field, &[2], SamplerId::Euler, &sched, 20, 50, 3).unwrap();
        assert_eq!(s.degenerate, 0);
        assert!(s.samples.iter().all(|c| (c - 1.0).abs() < 1e-6));
        assert!(s.std < 1e-6);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 50);
        let mean: f64 = s.samples.iter().sum::<f64>() / s.samples.len() as f64;
        assert!((mean - s.mean).abs() <= 1e-12);
    }

    #[test]
    fn all_degenerate_is_an_analysis_error() {
        let field = FnField(|x: &TensorBuf<f32>, _| TensorBuf::zeros(x.shape().to_vec()));
        let sched = crate::schedules::ScheduleParams::default().build().unwrap();
        assert!(matches!(
            curvature_stats(&field, &[2], SamplerId::Euler, &sched, 4, 5, 1),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn pull_to_target_field_points_at_the_end() {
        let start = TensorBuf::new(vec![1, 4], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let end = TensorBuf::new(vec![1, 4], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let target = end.clone();
        let field = FnField(move |x: &TensorBuf<f32>, _| {
            TensorBuf::from_fn(x.shape().to_vec(), |i| target.data()[i % 4] - x.data()[i])
        });
        let p = project_field(&field, &start, &end, 11, 0.5, 0.5, 9).unwrap();
        assert!((dot(&p.e1, &p.e1) - 1.0).abs() < 1e-6);
        assert!((dot(&p.e2, &p.e2) - 1.0).abs() < 1e-6);
        assert!(dot(&p.e1, &p.e2).abs() < 1e-6);
        for ((u, v), (a, b)) in p.grid.iter().zip(&p.arrows) {
            // Arrow equals end_uv − (u, v) in plane coordinates.
            assert!((a - (p.end_uv.0 - u)).abs() < 1e-5);
            assert!((b - (p.end_uv.1 - v)).abs() < 1e-5);
        }
        let at_end = p
            .grid
            .iter()
            .position(|&(u, v)| (u - p.end_uv.0).abs() < 1e-9 && (v - p.end_uv.1).abs() < 1e-9)
            .expect("end state lies on the grid");
        let (a, b) = p.arrows[at_end];
        assert!(a.abs() < 1e-5 && b.abs() < 1e-5);
        assert!(project_field(&field, &start, &start, 11, 0.5, 0.5, 9).is_err());
    }

    #[test]
    fn interpolation_endpoints_match_generation() {
        let field = FnField(|x: &TensorBuf<f32>, t: f64| x.map(|v| (v * t as f32).sin()));
        let sched = crate::schedules::ScheduleParams::default().build().unwrap();
        let za = crate::samplers::initial_noise::<f32>(&[3], 1, 5);
        let zb = crate::samplers::initial_noise::<f32>(&[3], 1, 6);
        let frames = latent_interpolation(&field, &za, &zb, 0, SamplerId::Euler, &sched, 10, 0).unwrap();
        assert_eq!(frames.batch(), 2);
        let a = crate::samplers::integrate_euler(&field, &za, 10, Record::Endpoints).unwrap();
        let b = crate::samplers::integrate_euler(&field, &zb, 10, Record::Endpoints).unwrap();
        assert_eq!(frames.item(0), a.final_state().data());
        assert_eq!(frames.item(1), b.final_state().data());
        let frames = latent_interpolation(&field, &za, &zb, 6, SamplerId::Rk4, &sched, 4, 0).unwrap();
        assert_eq!(frame_differences(&frames).len(), 7);
    }

    fn random_orthogonal(dim: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 0);
        let m = DMatrix::from_fn(dim, dim, |_, _| rng::normal::<f64>(&mut r));
        m.qr().q()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn straightness_is_invariant_under_isometries_and_scaling(
            seed in any::<u64>(),
            dim in 2usize..6,
            len in 2usize..12,
            scale in 0.01f64..100.0,
        ) {
            let mut r = rng::stream(seed, 1);
            let path: Vec<Vec<f64>> = (0..len).map(|_| (0..dim).map(|_| rng::normal::<f64>(&mut r)).collect()).collect();
            let c = match straightness(&path) {
                Ok(c) => c,
                Err(_) => return Ok(()),
            };
            prop_assert!(c >= 1.0 - 1e-9);
            let q = random_orthogonal(dim, seed);
            let shift: Vec<f64> = (0..dim).map(|_| 10.0 * rng::normal::<f64>(&mut r)).collect();
            let moved: Vec<Vec<f64>> = path
                .iter()
                .map(|p| {
                    let v = &q * nalgebra::DVector::from_column_slice(p);
                    v.iter().zip(&shift).map(|(a, s)| scale * a + s).collect()
                })
                .collect();
            let c2 = straightness(&moved).unwrap();
            prop_assert!((c - c2).abs() <= 1e-9 * c);
        }

        #[test]
        fn uniform_time_energy_bounds_the_squared_chord(
            seed in any::<u64>(),
            dim in 1usize..5,
            len in 2usize..10,
        ) {
            let mut r = rng::stream(seed, 2);
            let path: Vec<Vec<f64>> = (0..len).map(|_| (0..dim).map(|_| rng::normal::<f64>(&mut r)).collect()).collect();
            let times: Vec<f64> = (0..len).map(|i| i as f64 / (len - 1) as f64).collect();
            let e = kinetic_energy(&path, &times).unwrap();
            let chord = diff_norm(&path[len - 1], &path[0]);
            prop_assert!(e >= chord * chord * (1.0 - 1e-12));
        }

        #[test]
        fn subsampled_straight_path_stays_straight(
            len in 3usize..40,
            stride in 1usize..5,
            dx in -5.0f64..5.0,
            dy in 0.1f64..5.0,
        ) {
            let path: Vec<Vec<f64>> = (0..len).map(|i| vec![dx * i as f64, dy * i as f64]).collect();
            let mut sub: Vec<Vec<f64>> = path.iter().step_by(stride).cloned().collect();
            if sub.last() != path.last() {
                sub.push(path[len - 1].clone());
            }
            prop_assert!((straightness(&sub).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
