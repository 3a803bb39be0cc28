//! Python bindings. Tensors cross the boundary as lists of items, each item a
//! flat list of floats; the item shape comes from the model.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rectiflow::backbone::{self, BackboneConfig, Model as CoreModel, Paradigm, Preset, TrainMeta};
use rectiflow::benchmark;
use rectiflow::data::make_toy;
use rectiflow::geometry;
use rectiflow::samplers::{self, GenerateOptions, SamplerId};
use rectiflow::schedules::{NoiseSchedule, ScheduleParams};
use rectiflow::training::{self, TrainConfig};
use rectiflow::{Error, TensorBuf};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Domain(_) | Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Stacks equally long items into a `[n, item_shape...]` tensor.
fn tensor(items: Vec<Vec<f32>>, item_shape: &[usize]) -> PyResult<TensorBuf<f32>> {
    let len: usize = item_shape.iter().product();
    if let Some(bad) = items.iter().position(|v| v.len() != len) {
        return Err(PyValueError::new_err(format!(
            "item {bad} has {} values, expected {len}",
            items[bad].len()
        )));
    }
    let mut shape = vec![items.len()];
    shape.extend_from_slice(item_shape);
    TensorBuf::new(shape, items.concat()).map_err(to_py)
}

fn items(t: &TensorBuf<f32>) -> Vec<Vec<f32>> {
    (0..t.batch()).map(|i| t.item(i).to_vec()).collect()
}

fn points(rows: &[Vec<f64>]) -> PyResult<TensorBuf<f32>> {
    let d = rows.first().map_or(0, Vec::len);
    let f: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|v| *v as f32).collect()).collect();
    tensor(f, &[d])
}

/// Linear β schedule of a diffusion model.
#[pyclass(name = "NoiseSchedule", frozen)]
struct PySchedule {
    inner: NoiseSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (steps = 1000, beta_start = 1e-4, beta_end = 0.02))]
    fn new(steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        let inner = ScheduleParams { steps, beta_start, beta_end }.build().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    /// ᾱ at step `k` (1-based; `alpha_bar(0)` is 1).
    fn alpha_bar(&self, k: usize) -> PyResult<f64> {
        if k > 0 {
            self.inner.check_step(k).map_err(to_py)?;
        }
        Ok(self.inner.alpha_bar_at(k))
    }

    fn time_of(&self, k: usize) -> f64 {
        self.inner.time_of(k)
    }
}

/// A time-conditioned network together with its paradigm.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    model: CoreModel<f32>,
    paradigm: Paradigm,
    sched: NoiseSchedule,
    losses: Vec<f64>,
}

impl PyModel {
    fn shape(&self) -> &[usize] {
        &self.model.config().in_shape
    }
}

#[pymethods]
impl PyModel {
    /// Untrained model from a preset (`toy_mlp`, `tiny_unet`, `paper_unet`).
    #[new]
    #[pyo3(signature = (paradigm = "flow", preset = "toy_mlp", seed = 0))]
    fn new(paradigm: &str, preset: &str, seed: u64) -> PyResult<Self> {
        let preset: Preset = parse(preset)?;
        let model = CoreModel::build(&BackboneConfig::from_preset(preset).with_seed(seed)).map_err(to_py)?;
        Ok(Self {
            model,
            paradigm: parse(paradigm)?,
            sched: ScheduleParams::default().build().map_err(to_py)?,
            losses: Vec::new(),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt = backbone::load(path).map_err(to_py)?;
        let sched = ckpt.train_meta.schedule.unwrap_or_default().build().map_err(to_py)?;
        Ok(Self {
            model: ckpt.model().map_err(to_py)?,
            paradigm: ckpt.paradigm,
            sched,
            losses: Vec::new(),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let meta = TrainMeta {
            steps: self.losses.len(),
            final_loss: self.losses.last().copied(),
            seed: self.model.config().seed,
            schedule: (self.paradigm == Paradigm::Diffusion).then_some(self.sched.params),
        };
        backbone::save(&self.model, self.paradigm, &meta, path).map_err(to_py)
    }

    #[getter]
    fn paradigm(&self) -> &'static str {
        self.paradigm.name()
    }

    #[getter]
    fn item_shape(&self) -> Vec<usize> {
        self.shape().to_vec()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.model.param_count()
    }

    /// Per-step training losses; empty for loaded or untrained models.
    #[getter]
    fn losses(&self) -> Vec<f64> {
        self.losses.clone()
    }

    /// Network output for a batch of items at per-item times `t`.
    fn forward(&self, py: Python<'_>, x: Vec<Vec<f32>>, t: Vec<f64>) -> PyResult<Vec<Vec<f32>>> {
        let x = tensor(x, self.shape())?;
        let out = py.detach(|| self.model.forward(&x, &t)).map_err(to_py)?;
        Ok(items(&out))
    }

    /// Draws `count` samples; `sampler` is euler or rk4 (flow), ancestral or ddim (diffusion).
    #[pyo3(signature = (sampler = "euler", steps = 10, count = 64, seed = 0, threads = 1))]
    fn sample(
        &self,
        py: Python<'_>,
        sampler: &str,
        steps: usize,
        count: usize,
        seed: u64,
        threads: usize,
    ) -> PyResult<Vec<Vec<f32>>> {
        let opts = GenerateOptions {
            sampler: parse(sampler)?,
            steps,
            count,
            seed,
            record: None,
            threads,
        };
        let out = py
            .detach(|| samplers::generate(&self.model, self.paradigm, &self.sched, &opts))
            .map_err(to_py)?;
        Ok(items(&out.samples))
    }

    /// Straightness statistics of `n` sampled trajectories.
    #[pyo3(signature = (sampler = None, steps = 50, n = 100, seed = 0))]
    fn curvature(
        &self,
        py: Python<'_>,
        sampler: Option<&str>,
        steps: usize,
        n: usize,
        seed: u64,
    ) -> PyResult<BTreeMap<String, f64>> {
        let sampler: SamplerId = match sampler {
            Some(s) => parse(s)?,
            None if self.paradigm == Paradigm::Flow => SamplerId::Euler,
            None => SamplerId::Ddim,
        };
        samplers::check_compatible(self.paradigm, sampler).map_err(to_py)?;
        let s = py
            .detach(|| geometry::curvature_stats(&self.model, self.shape(), sampler, &self.sched, steps, n, seed))
            .map_err(to_py)?;
        Ok(BTreeMap::from([
            ("mean".to_string(), s.mean),
            ("std".to_string(), s.std),
            ("min".to_string(), s.min),
            ("max".to_string(), s.max),
            ("degenerate".to_string(), s.degenerate as f64),
        ]))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(paradigm={}, item_shape={:?}, params={})",
            self.paradigm,
            self.shape(),
            self.model.param_count()
        )
    }
}

/// Points from a named 2D generator as `[[x, y], ...]`.
#[pyfunction]
#[pyo3(signature = (name, count, seed = 0, params = None))]
fn toy_data(name: &str, count: usize, seed: u64, params: Option<BTreeMap<String, f64>>) -> PyResult<Vec<Vec<f32>>> {
    let d = make_toy(name, count, seed, &params.unwrap_or_default()).map_err(to_py)?;
    Ok(items(&d.points))
}

/// Trains a `toy_mlp` model on 2D points.
#[pyfunction]
#[pyo3(signature = (paradigm, data, steps = 1000, batch_size = 128, learning_rate = 2e-4, seed = 0))]
fn train(
    py: Python<'_>,
    paradigm: &str,
    data: Vec<Vec<f64>>,
    steps: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<PyModel> {
    let paradigm: Paradigm = parse(paradigm)?;
    let dataset = rectiflow::data::ToyDataset {
        points: points(&data)?,
        generator: rectiflow::data::ToyGenerator::SingleGaussian,
        params: BTreeMap::new(),
    };
    let config = TrainConfig {
        steps,
        batch_size,
        learning_rate,
        seed,
        ..TrainConfig::new(paradigm, BackboneConfig::toy_mlp().with_seed(seed))
    };
    let trained = py.detach(|| training::train(&config, &dataset)).map_err(to_py)?;
    Ok(PyModel {
        model: trained.model,
        paradigm,
        sched: config.schedule_params().build().map_err(to_py)?,
        losses: trained.losses,
    })
}

/// Path length over chord length of a sequence of states.
#[pyfunction]
fn straightness(path: Vec<Vec<f64>>) -> PyResult<f64> {
    geometry::straightness(&path).map_err(to_py)
}

#[pyfunction]
fn kinetic_energy(path: Vec<Vec<f64>>, times: Vec<f64>) -> PyResult<f64> {
    geometry::kinetic_energy(&path, &times).map_err(to_py)
}

#[pyfunction]
fn second_derivative(path: Vec<Vec<f64>>, times: Vec<f64>) -> PyResult<f64> {
    geometry::second_derivative(&path, &times).map_err(to_py)
}

/// Fréchet distance between Gaussian fits of two point sets.
#[pyfunction]
fn frechet_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    benchmark::frechet_distance(&points(&a)?, &points(&b)?).map_err(to_py)
}

#[pymodule]
fn pyrectiflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(toy_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(straightness, m)?)?;
    m.add_function(wrap_pyfunction!(kinetic_energy, m)?)?;
    m.add_function(wrap_pyfunction!(second_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn items_round_trip_through_tensor() {
        let rows = vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]];
        let t = tensor(rows.clone(), &[1, 2, 2]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(items(&t), rows);
    }

    #[test]
    fn ragged_items_are_rejected() {
        assert!(tensor(vec![vec![1.0, 2.0], vec![3.0]], &[2]).is_err());
        assert!(points(&[vec![1.0, 2.0], vec![3.0, 4.0, 5.0]]).is_err());
    }
}
