use std::time::Instant;

use rectiflow::benchmark::latency_report;
use rectiflow::data::load_mnist_dir;
use rectiflow::export::{histogram_svg, write_png_grid, write_text};
use rectiflow::geometry::{histogram, CurvatureStats, HISTOGRAM_BINS};
use rectiflow::training::{loss_log_csv, LossRecord, Trained};
use rectiflow::verify::{self, CurvatureSummary, MnistProfile, Outcome, Status, ToyProfile};
use rectiflow::{Error, Result};

use super::{file_stem, write_json, write_samples_figure};
use crate::args::ReproduceArgs;
use crate::run::{Area, RunDir};

fn save_model(t: &Trained, name: &str, run: &RunDir) -> Result<()> {
    t.save(run.artifact(Area::Ckpt, name)?)?;
    let log: Vec<LossRecord> = if run.deterministic {
        t.log.iter().map(|r| LossRecord { wall_ms: 0.0, ..*r }).collect()
    } else {
        t.log.clone()
    };
    write_text(run.artifact(Area::Reports, format!("loss_{name}.csv"))?, &loss_log_csv(&log))
}

fn curvature_figure(c: &CurvatureSummary, title: &str) -> Result<String> {
    let all: [(&str, &CurvatureStats); 3] = [
        ("flow/euler", &c.flow_euler),
        ("diffusion/ddim", &c.diffusion_ddim),
        ("diffusion/ancestral", &c.diffusion_ancestral),
    ];
    let hi = all.iter().map(|(_, s)| s.max).fold(1.0, f64::max);
    let hists: Vec<_> = all.iter().map(|(n, s)| (*n, histogram(&s.samples, 1.0, hi, HISTOGRAM_BINS))).collect();
    let refs: Vec<_> = hists.iter().map(|(n, h)| (*n, h)).collect();
    histogram_svg(title, "C = path length / chord", &refs)
}

fn write_curvature(c: &CurvatureSummary, prefix: &str, run: &RunDir) -> Result<()> {
    for (name, s) in [("flow_euler", &c.flow_euler), ("diffusion_ddim", &c.diffusion_ddim), ("diffusion_ancestral", &c.diffusion_ancestral)] {
        write_text(run.artifact(Area::Reports, format!("{prefix}curvature_{name}.csv"))?, &s.to_csv())?;
    }
    write_json(&run.artifact(Area::Reports, format!("{prefix}curvature.json"))?, c)?;
    let svg = curvature_figure(c, &format!("{prefix}straightness"))?;
    write_text(run.artifact(Area::Figures, format!("{prefix}curvature.svg"))?, &svg)
}

pub fn run(args: &ReproduceArgs, run: &RunDir) -> Result<()> {
    let seed = args.common.seed;
    let started = Instant::now();
    let profile = ToyProfile {
        train_count: args.train_count,
        reference_count: args.reference_count,
        train_steps: args.train_steps,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed,
        eval_count: args.eval_count,
        curvature_n: args.curvature_n,
        latency_reps: args.latency_reps,
        threads: run.threads,
        ..ToyProfile::default()
    };
    write_json(&run.artifact(Area::Reports, "profile.json")?, &profile)?;

    eprintln!("analytic checks");
    let mut outcomes = verify::analytic_checks(seed)?;
    write_json(&run.artifact(Area::Reports, "analytic.json")?, &outcomes)?;

    eprintln!("toy profile: training both paradigms for {} steps", profile.train_steps);
    let toy = verify::run_toy(&profile)?;
    save_model(&toy.models.flow, "flow", run)?;
    save_model(&toy.models.diffusion, "diffusion", run)?;
    write_curvature(&toy.curvature, "", run)?;
    toy.steps.write(run.area(Area::Reports)?.join("steps"))?;
    toy.solver.write(run.area(Area::Reports)?.join("solver"))?;
    latency_report(&toy.latency.stats, seed, run.timestamp())?.write(run.area(Area::Reports)?.join("latency"))?;
    write_json(&run.artifact(Area::Reports, "toy_metrics.json")?, &toy.metrics)?;
    for (name, samples) in toy.step_sets.iter().chain(&toy.solver_sets) {
        write_samples_figure(run, Area::Figures, &file_stem(name), samples, Some(&toy.models.reference))?;
    }
    outcomes.extend(toy.outcomes.iter().cloned());
    let toy_secs = started.elapsed().as_secs_f64();

    let mut notes = vec![format!(
        "toy profile: {} on {} points, {} steps at batch {}, {} threads, {toy_secs:.0} s",
        profile.generator, profile.train_count, profile.train_steps, profile.batch_size, profile.threads
    )];
    match &args.mnist_dir {
        Some(dir) => {
            eprintln!("image-scale run");
            let data = load_mnist_dir(dir, true)?;
            let mp = MnistProfile {
                train_steps: args.mnist_steps,
                seed,
                threads: run.threads,
                ..MnistProfile::default()
            };
            let m = verify::run_mnist(&data, &mp)?;
            save_model(&m.flow, "mnist_flow", run)?;
            save_model(&m.diffusion, "mnist_diffusion", run)?;
            write_curvature(&m.curvature, "mnist_", run)?;
            for (name, samples) in &m.grids {
                let path = run.artifact(Area::Figures, format!("mnist_{}.png", file_stem(name)))?;
                write_png_grid(samples, 8, &path)?;
            }
            notes.push(format!("image run: {} images, {} steps", mp.images.min(data.images.batch()), mp.train_steps));
            outcomes.push(m.outcome);
        }
        None => outcomes.push(Outcome::skipped(12, "image-scale smoke run", "no --mnist-dir given")),
    }

    let summary = verify::summary_markdown(&outcomes, &notes);
    write_text(run.artifact(Area::Root, "summary.md")?, &summary)?;
    print!("{summary}");
    let failed = outcomes.iter().filter(|o| o.status == Status::Fail).count();
    if args.strict && failed > 0 {
        return Err(Error::Analysis(format!("{failed} criteria failed")));
    }
    Ok(())
}
