use rectiflow::backbone::{assert_same_architecture, Paradigm};
use rectiflow::benchmark::{
    check_equal_cost, latency_report, measure_latency, nfe_matched_pairs, solver_sensitivity, step_ablation,
    BenchReport, Classifier, Features, QualityRun, SampleSets,
};
use rectiflow::samplers::check_compatible;
use rectiflow::{Error, Result};

use super::{check_item_shape, file_stem, write_samples_figure, Data, Loaded};
use crate::args::{BenchCommand, FeatureKind, LatencyArgs, QualityArgs, SolverArgs, StepsArgs};
use crate::run::{Area, RunDir};

const CLASSIFIER_BATCH: usize = 64;

pub fn run(cmd: &BenchCommand, run: &RunDir) -> Result<()> {
    match cmd {
        BenchCommand::Steps(a) => steps(a, run),
        BenchCommand::Solver(a) => solver(a, run),
        BenchCommand::Latency(a) => latency(a, run),
    }
}

fn expect_paradigm(m: &Loaded, p: Paradigm, flag: &str) -> Result<()> {
    if m.ckpt.paradigm != p {
        return Err(Error::config(format!("{flag} must be a {p} checkpoint, got {}", m.ckpt.paradigm)));
    }
    Ok(())
}

fn classifier(q: &QualityArgs, data: &Data, seed: u64) -> Result<Option<Classifier>> {
    match q.features {
        FeatureKind::Pixel => Ok(None),
        FeatureKind::Classifier => {
            let images = data.images().ok_or_else(|| Error::config("classifier features need --data-dir"))?;
            let mut c = Classifier::new(seed);
            let loss = c.train(images, q.classifier_steps, CLASSIFIER_BATCH, seed)?;
            eprintln!("feature classifier trained, final loss {loss:.4}");
            Ok(Some(c))
        }
    }
}

fn quality_run<'a>(
    q: &QualityArgs,
    data: &'a Data,
    clf: Option<&'a Classifier>,
    sched: &'a rectiflow::schedules::NoiseSchedule,
    run: &RunDir,
    seed: u64,
) -> Result<QualityRun<'a>> {
    if q.count < 2 {
        return Err(Error::config("count must be at least 2"));
    }
    Ok(QualityRun {
        sched,
        reference: data.reference(),
        features: clf.map_or(Features::Pixel, Features::Classifier),
        count: q.count,
        seed,
        threads: run.threads,
        timestamp: run.timestamp(),
    })
}

fn finish(report: &BenchReport, sets: &SampleSets, data: &Data, run: &RunDir) -> Result<()> {
    let dir = run.area(Area::Reports)?;
    report.write(&dir)?;
    for (name, samples) in sets {
        write_samples_figure(run, Area::Figures, &file_stem(name), samples, Some(data.reference()))?;
    }
    for row in &report.rows {
        println!("{:<28} {:>8} {:>12.5}", row.config, row.metric, row.value);
    }
    for p in &report.pairs {
        println!("FD {} vs {}: {:.5}", p.a, p.b, p.fd);
    }
    println!("report: {}", dir.join("report.json").display());
    Ok(())
}

fn steps(args: &StepsArgs, run: &RunDir) -> Result<()> {
    let seed = args.common.seed;
    let flow = Loaded::open(&args.ckpt_flow)?;
    let diff = Loaded::open(&args.ckpt_diff)?;
    expect_paradigm(&flow, Paradigm::Flow, "ckpt_flow")?;
    expect_paradigm(&diff, Paradigm::Diffusion, "ckpt_diff")?;
    assert_same_architecture(&flow.model, &diff.model)?;
    let data = Data::load(&args.quality.data, seed)?;
    check_item_shape(flow.item_shape(), data.item_shape(), "checkpoint")?;
    let clf = classifier(&args.quality, &data, seed)?;
    let q = quality_run(&args.quality, &data, clf.as_ref(), &diff.sched, run, seed)?;
    let (report, sets) = step_ablation(&flow.model, &diff.model, &args.step_counts, &q)?;
    finish(&report, &sets, &data, run)
}

fn solver(args: &SolverArgs, run: &RunDir) -> Result<()> {
    let seed = args.common.seed;
    let flow = Loaded::open(&args.ckpt_flow)?;
    expect_paradigm(&flow, Paradigm::Flow, "ckpt_flow")?;
    let configs = nfe_matched_pairs(&args.euler_steps)?;
    check_equal_cost(flow.model.config(), &configs)?;
    let data = Data::load(&args.quality.data, seed)?;
    check_item_shape(flow.item_shape(), data.item_shape(), "checkpoint")?;
    let clf = classifier(&args.quality, &data, seed)?;
    let q = quality_run(&args.quality, &data, clf.as_ref(), &flow.sched, run, seed)?;
    let (report, sets) = solver_sensitivity(&flow.model, flow.item_shape(), &configs, &q)?;
    finish(&report, &sets, &data, run)
}

fn latency(args: &LatencyArgs, run: &RunDir) -> Result<()> {
    let m = Loaded::open(&args.ckpt)?;
    let mut stats = Vec::new();
    for &sampler in &args.samplers {
        check_compatible(m.ckpt.paradigm, sampler)?;
        for &steps in &args.steps {
            let s = measure_latency(&m.model, m.item_shape(), sampler, &m.sched, steps, args.batch, args.warmup, args.reps)?;
            println!(
                "{sampler}/N={steps}: median {:.4} ms/sample (p10 {:.4}, p90 {:.4}), {} evaluations",
                s.median_ms, s.p10_ms, s.p90_ms, s.nfe
            );
            if let Some(w) = &s.warning {
                eprintln!("warning: {w}");
            }
            stats.push(s);
        }
    }
    let report = latency_report(&stats, args.common.seed, run.timestamp())?;
    let dir = run.area(Area::Reports)?;
    report.write(&dir)?;
    println!("report: {}", dir.join("report.json").display());
    Ok(())
}
