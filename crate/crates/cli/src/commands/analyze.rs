use rectiflow::backbone::Paradigm;
use rectiflow::export::{histogram_svg, quiver_svg, write_png_grid, write_text};
use rectiflow::geometry::{
    curvature_stats, frame_differences, histogram, latent_interpolation, project_field, separation, CurvatureStats,
    HISTOGRAM_BINS,
};
use rectiflow::samplers::{check_compatible, initial_noise, run_sampler, Record, SamplerId};
use rectiflow::{Error, Result};
use serde_json::{json, Value};

use super::{is_image, write_json, write_samples_figure, Loaded};
use crate::args::{AnalyzeCommand, CurvatureArgs, FieldArgs, InterpArgs};
use crate::run::{Area, RunDir};

pub fn run(cmd: &AnalyzeCommand, run: &RunDir) -> Result<()> {
    match cmd {
        AnalyzeCommand::Curvature(a) => curvature(a, run),
        AnalyzeCommand::Field(a) => field(a, run),
        AnalyzeCommand::Interp(a) => interp(a, run),
    }
}

fn default_sampler(p: Paradigm) -> SamplerId {
    match p {
        Paradigm::Flow => SamplerId::Euler,
        Paradigm::Diffusion => SamplerId::Ddim,
    }
}

fn stats_for(m: &Loaded, sampler: Option<SamplerId>, steps: usize, n: usize, seed: u64) -> Result<CurvatureStats> {
    let sampler = sampler.unwrap_or_else(|| default_sampler(m.ckpt.paradigm));
    check_compatible(m.ckpt.paradigm, sampler)?;
    curvature_stats(&m.model, m.item_shape(), sampler, &m.sched, steps, n, seed)
}

fn summary(s: &CurvatureStats) -> Value {
    json!({
        "sampler": s.sampler,
        "steps": s.steps,
        "n": s.n,
        "degenerate": s.degenerate,
        "mean": s.mean,
        "std": s.std,
        "standard_error": s.standard_error(),
        "min": s.min,
        "max": s.max,
    })
}

fn label(paradigm: Paradigm, s: &CurvatureStats) -> String {
    format!("{paradigm}/{}", s.sampler)
}

fn curvature(args: &CurvatureArgs, run: &RunDir) -> Result<()> {
    let seed = args.common.seed;
    let m = Loaded::open(&args.ckpt)?;
    let main = stats_for(&m, args.sampler, args.steps, args.n, seed)?;
    write_text(run.artifact(Area::Reports, "curvature.csv")?, &main.to_csv())?;
    let mut report = json!({ "primary": summary(&main) });
    let mut series = vec![(label(m.ckpt.paradigm, &main), main.samples.clone())];
    println!("{}: C mean {:.4} (std {:.4}, {} degenerate)", series[0].0, main.mean, main.std, main.degenerate);

    if let Some(path) = &args.compare_ckpt {
        let other = Loaded::open(path)?;
        let s = stats_for(&other, args.compare_sampler, args.steps, args.n, seed)?;
        write_text(run.artifact(Area::Reports, "curvature_compare.csv")?, &s.to_csv())?;
        report["compare"] = summary(&s);
        report["separation"] = json!(separation(&main, &s));
        println!("{}: C mean {:.4} (std {:.4})", label(other.ckpt.paradigm, &s), s.mean, s.std);
        series.push((label(other.ckpt.paradigm, &s), s.samples));
    } else if args.compare_sampler.is_some() {
        return Err(Error::config("compare_sampler needs compare_ckpt"));
    }
    write_json(&run.artifact(Area::Reports, "curvature.json")?, &report)?;

    let hi = series.iter().flat_map(|(_, v)| v.iter().copied()).fold(1.0, f64::max);
    let hists: Vec<_> = series.iter().map(|(name, v)| (name.as_str(), histogram(v, 1.0, hi, HISTOGRAM_BINS))).collect();
    let refs: Vec<_> = hists.iter().map(|(n, h)| (*n, h)).collect();
    let svg = histogram_svg("Straightness", "C = path length / chord", &refs)?;
    write_text(run.artifact(Area::Figures, "curvature.svg")?, &svg)?;
    Ok(())
}

fn field(args: &FieldArgs, run: &RunDir) -> Result<()> {
    let seed = args.common.seed;
    let m = Loaded::open(&args.ckpt)?;
    if m.ckpt.paradigm != Paradigm::Flow {
        return Err(Error::config("field projection needs a flow checkpoint"));
    }
    let x0 = initial_noise::<f32>(m.item_shape(), 1, seed);
    let traj = run_sampler(&m.model, SamplerId::Euler, &m.sched, &x0, args.steps, seed, 0, Record::Endpoints)?;
    let p = project_field(&m.model, &x0, traj.final_state(), args.grid_res, args.extent, args.t_eval, seed)?;
    write_json(&run.artifact(Area::Reports, "field.json")?, &p)?;
    let svg = quiver_svg(&format!("Velocity field at t = {}", args.t_eval), &p)?;
    write_text(run.artifact(Area::Figures, "field.svg")?, &svg)?;
    println!("projected {} grid points", p.grid.len());
    Ok(())
}

fn interp(args: &InterpArgs, run: &RunDir) -> Result<()> {
    let seed = args.common.seed;
    let m = Loaded::open(&args.ckpt)?;
    check_compatible(m.ckpt.paradigm, args.sampler)?;
    let z = initial_noise::<f32>(m.item_shape(), 2, seed);
    let (za, zb) = (z.slice_batch(0, 1), z.slice_batch(1, 2));
    let frames = latent_interpolation(&m.model, &za, &zb, args.k, args.sampler, &m.sched, args.steps, seed)?;
    let diffs = frame_differences(&frames);
    let mut sorted = diffs.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);
    let max = sorted.last().copied().unwrap_or(0.0);
    write_json(
        &run.artifact(Area::Reports, "interp.json")?,
        &json!({ "frames": frames.batch(), "differences": diffs, "median": median, "max": max }),
    )?;
    let path = if is_image(m.item_shape()) {
        let path = run.artifact(Area::Figures, "interp.png")?;
        write_png_grid(&frames, frames.batch(), &path)?;
        path
    } else {
        write_samples_figure(run, Area::Figures, "interp", &frames, None)?
    };
    println!("{} frames, step median {median:.4}, max {max:.4}", frames.batch());
    println!("figure: {}", path.display());
    Ok(())
}
