use std::path::Path;

use rectiflow::export::write_png_grid;
use rectiflow::samplers::{check_compatible, generate, save_trajectory, GenerateOptions, Record};
use rectiflow::tensor::TensorBuf;
use rectiflow::{Error, Result};
use serde_json::json;

use super::{is_image, write_json, write_samples_figure, Loaded};
use crate::args::SampleArgs;
use crate::run::{Area, RunDir};

/// Writes `<path>` (JSON header) and `<path>.bin` (little-endian `f32`).
fn save_samples(samples: &TensorBuf<f32>, path: &Path, extra: serde_json::Value) -> Result<()> {
    let blob = path.with_extension("bin");
    let bytes: Vec<u8> = samples.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    let mut header = json!({
        "shape": samples.shape(),
        "dtype": "f32le",
        "blob": blob.file_name().map(|n| n.to_string_lossy().into_owned()),
    });
    header.as_object_mut().expect("object").extend(extra.as_object().cloned().unwrap_or_default());
    write_json(path, &header)
}

pub fn run(args: &SampleArgs, run: &RunDir) -> Result<()> {
    if args.count == 0 {
        return Err(Error::config("count must be positive"));
    }
    if args.record_stride == 0 {
        return Err(Error::config("record_stride must be positive"));
    }
    let m = Loaded::open(&args.ckpt)?;
    check_compatible(m.ckpt.paradigm, args.sampler)?;
    let opts = GenerateOptions {
        sampler: args.sampler,
        steps: args.steps,
        count: args.count,
        seed: args.common.seed,
        record: args.record_traj.as_ref().map(|_| Record::Every(args.record_stride)),
        threads: run.threads,
    };
    let out = generate(&m.model, m.ckpt.paradigm, &m.sched, &opts)?;
    save_samples(
        &out.samples,
        &run.artifact(Area::Samples, "samples.json")?,
        json!({ "sampler": args.sampler, "steps": args.steps, "nfe": out.nfe, "seed": args.common.seed }),
    )?;
    if let (Some(name), Some(traj)) = (&args.record_traj, &out.trajectory) {
        let path = run.artifact(Area::Samples, name)?;
        save_trajectory(traj, &path)?;
        println!("trajectory: {}", path.display());
    }
    let figure = if is_image(m.item_shape()) {
        let path = run.artifact(Area::Samples, &args.grid)?;
        let cols = (args.count as f64).sqrt().ceil() as usize;
        write_png_grid(&out.samples, cols, &path)?;
        path
    } else {
        write_samples_figure(run, Area::Figures, "samples", &out.samples, None)?
    };
    println!("{} samples with {} at N={} ({} evaluations)", args.count, args.sampler, args.steps, out.nfe);
    println!("figure: {}", figure.display());
    Ok(())
}
