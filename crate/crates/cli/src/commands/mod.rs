pub mod analyze;
pub mod bench;
pub mod reproduce;
pub mod sample;
pub mod train;

use std::path::{Path, PathBuf};

use rectiflow::backbone::checkpoint::MANIFEST_FILE;
use rectiflow::backbone::{self, Checkpoint, Model};
use rectiflow::data::{load_mnist_dir, Dataset, ImageDataset, ToyDataset};
use rectiflow::export::{scatter_svg, write_png_grid, write_text};
use rectiflow::schedules::NoiseSchedule;
use rectiflow::tensor::TensorBuf;
use rectiflow::verify::ToyProfile;
use rectiflow::{Error, Result};

use crate::args::DataArgs;
use crate::run::{Area, RunDir};

const TOY_TRAIN_DEFAULT: usize = 20_000;

/// Accepts a checkpoint directory or a run directory holding `ckpt/`.
pub fn resolve_ckpt(path: &Path) -> PathBuf {
    let nested = path.join("ckpt");
    if !path.join(MANIFEST_FILE).exists() && nested.join(MANIFEST_FILE).exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

pub struct Loaded {
    pub ckpt: Checkpoint,
    pub model: Model<f32>,
    pub sched: NoiseSchedule,
}

impl Loaded {
    pub fn open(path: &Path) -> Result<Self> {
        let ckpt = backbone::load(resolve_ckpt(path))?;
        let model = ckpt.model()?;
        let sched = ckpt.train_meta.schedule.unwrap_or_default().build()?;
        Ok(Self { ckpt, model, sched })
    }

    pub fn item_shape(&self) -> &[usize] {
        &self.model.config().in_shape
    }
}

pub enum Data {
    Toy { train: ToyDataset, reference: TensorBuf<f32> },
    Images { train: ImageDataset, reference: TensorBuf<f32> },
}

impl Data {
    pub fn load(args: &DataArgs, seed: u64) -> Result<Self> {
        if args.reference_count == 0 {
            return Err(Error::config("reference_count must be positive"));
        }
        match &args.data_dir {
            Some(dir) => {
                let all = load_mnist_dir(dir, true)?;
                let train = match args.subset {
                    Some(n) => all.subset(n)?,
                    None => all,
                };
                let test = load_mnist_dir(dir, false)?;
                let n = args.reference_count.min(test.count());
                Ok(Data::Images {
                    train,
                    reference: test.images.slice_batch(0, n),
                })
            }
            None => {
                let profile = ToyProfile {
                    generator: args.toy.clone(),
                    train_count: args.subset.unwrap_or(TOY_TRAIN_DEFAULT),
                    reference_count: args.reference_count,
                    seed,
                    ..ToyProfile::default()
                };
                if profile.train_count == 0 {
                    return Err(Error::config("subset must be positive"));
                }
                let (train, reference) = profile.data()?;
                Ok(Data::Toy { train, reference })
            }
        }
    }

    pub fn train(&self) -> &dyn Dataset {
        match self {
            Data::Toy { train, .. } => train,
            Data::Images { train, .. } => train,
        }
    }

    pub fn reference(&self) -> &TensorBuf<f32> {
        match self {
            Data::Toy { reference, .. } | Data::Images { reference, .. } => reference,
        }
    }

    pub fn images(&self) -> Option<&ImageDataset> {
        match self {
            Data::Images { train, .. } => Some(train),
            Data::Toy { .. } => None,
        }
    }

    pub fn item_shape(&self) -> &[usize] {
        &self.reference().shape()[1..]
    }
}

/// Fails with a configuration error unless items of `data` fit the model.
pub fn check_item_shape(model_shape: &[usize], data_shape: &[usize], what: &str) -> Result<()> {
    if model_shape != data_shape {
        return Err(Error::config(format!(
            "{what} expects items of shape {model_shape:?}, data has {data_shape:?}"
        )));
    }
    Ok(())
}

pub fn file_stem(config: &str) -> String {
    config.replace('/', "_").replace('=', "")
}

pub fn is_image(shape: &[usize]) -> bool {
    shape.len() == 3
}

/// PNG grid for image samples, SVG scatter (with the reference) for 2D points.
pub fn write_samples_figure(
    run: &RunDir,
    area: Area,
    stem: &str,
    samples: &TensorBuf<f32>,
    reference: Option<&TensorBuf<f32>>,
) -> Result<PathBuf> {
    let shape = &samples.shape()[1..];
    if is_image(shape) {
        let n = samples.batch().min(64);
        let shown = samples.slice_batch(0, n);
        let cols = (n as f64).sqrt().ceil() as usize;
        let path = run.artifact(area, format!("{stem}.png"))?;
        write_png_grid(&shown, cols, &path)?;
        Ok(path)
    } else if shape == [2] {
        let mut series = Vec::new();
        if let Some(r) = reference {
            series.push(("reference", r));
        }
        series.push(("generated", samples));
        let path = run.artifact(area, format!("{stem}.svg"))?;
        write_text(&path, &scatter_svg(stem, &series)?)?;
        Ok(path)
    } else {
        Err(Error::config(format!("no figure type for items of shape {shape:?}")))
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}
