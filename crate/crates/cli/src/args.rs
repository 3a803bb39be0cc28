//! Command-line surface. Every option can also be set in a `--config` file
//! under its snake_case name (`batch_size = 64`); flags win over the file and
//! the file wins over the defaults shown here.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rectiflow::backbone::{Paradigm, Preset};
use rectiflow::data::ToyGenerator;
use rectiflow::samplers::SamplerId;

#[derive(Parser, Debug)]
#[command(name = "rectiflow", version, about = "Diffusion and rectified-flow training, sampling, path geometry and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one paradigm and write a checkpoint.
    Train(TrainArgs),
    /// Generate samples from a checkpoint.
    Sample(SampleArgs),
    /// Trajectory geometry and field analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Step-count, solver and latency experiments.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Train the toy pair and evaluate every acceptance criterion.
    Reproduce(ReproduceArgs),
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Straightness, kinetic energy and second differences of sampled paths.
    Curvature(CurvatureArgs),
    /// Velocity field projected on the plane through a noise draw and its sample.
    Field(FieldArgs),
    /// Samples along a straight line between two noise draws.
    Interp(InterpArgs),
}

#[derive(Subcommand, Debug)]
pub enum BenchCommand {
    /// Fréchet distance against held-out data across step counts.
    Steps(StepsArgs),
    /// Euler against RK4 at matched function evaluations.
    Solver(SolverArgs),
    /// Wall-clock latency per sample.
    Latency(LatencyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat `key = value` file; keys are option names in snake_case.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root of the run directories.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Run directory name; defaults to a UTC timestamp plus a seed hash.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Seed for model init, data, batches and sampling noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Serial execution and fixed report timestamps.
    #[arg(long)]
    pub deterministic: bool,
}

/// Where training and reference data come from. Toy points are drawn with
/// the run seed; the reference set is a disjoint held-out draw.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// 2D generator: two_gaussians, gaussian_ring or single_gaussian.
    #[arg(long, default_value = "two_gaussians", value_parser = parse_toy)]
    pub toy: String,
    /// Directory with MNIST IDX files; replaces the toy data when set.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Training items kept (toy default 20000, images default all).
    #[arg(long)]
    pub subset: Option<usize>,
    /// Held-out toy points or test images used as the reference set.
    #[arg(long, default_value_t = 5_000)]
    pub reference_count: usize,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// flow or diffusion.
    #[arg(long, default_value = "flow", value_parser = parse_paradigm)]
    pub paradigm: Paradigm,
    /// Backbone preset: toy_mlp, tiny_unet or paper_unet.
    #[arg(long, default_value = "toy_mlp", value_parser = parse_preset)]
    pub preset: Preset,
    /// Optimizer steps.
    #[arg(long, default_value_t = 2_000)]
    pub steps: usize,
    /// Items per batch.
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = rectiflow::training::DEFAULT_LEARNING_RATE)]
    pub learning_rate: f64,
    /// Loss log interval in steps.
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    /// Global gradient-norm clip; off unless set.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Diffusion chain length.
    #[arg(long = "T", id = "T", default_value_t = 1000)]
    pub diffusion_steps: usize,
    /// First β of the linear schedule.
    #[arg(long, default_value_t = 1e-4)]
    pub beta_start: f64,
    /// Last β of the linear schedule.
    #[arg(long, default_value_t = 0.02)]
    pub beta_end: f64,
}

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory, or a run directory containing `ckpt/`.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// euler or rk4 for flow; ancestral or ddim for diffusion.
    #[arg(long, default_value = "euler", value_parser = parse_sampler)]
    pub sampler: SamplerId,
    /// Sampler steps N.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Samples to draw.
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// File name under `samples/` for the recorded trajectory.
    #[arg(long)]
    pub record_traj: Option<PathBuf>,
    /// Keep every n-th state of the recorded trajectory.
    #[arg(long, default_value_t = 1)]
    pub record_stride: usize,
    /// File name under `samples/` for the PNG grid (image models only).
    #[arg(long, default_value = "grid.png")]
    pub grid: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct CurvatureArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory, or a run directory containing `ckpt/`.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Defaults to euler for flow and ddim for diffusion checkpoints.
    #[arg(long, value_parser = parse_sampler)]
    pub sampler: Option<SamplerId>,
    /// Sampler steps per trajectory.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Trajectories to sample.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Second checkpoint overlaid in the histogram.
    #[arg(long)]
    pub compare_ckpt: Option<PathBuf>,
    /// Sampler for the second checkpoint; same defaults as `--sampler`.
    #[arg(long, value_parser = parse_sampler)]
    pub compare_sampler: Option<SamplerId>,
}

#[derive(Args, Debug, Clone)]
pub struct FieldArgs {
    #[command(flatten)]
    pub common: Common,
    /// Flow checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Lattice points per side.
    #[arg(long, default_value_t = 15)]
    pub grid_res: usize,
    /// Half-width of the lattice in units of the start-to-end distance.
    #[arg(long, default_value_t = 0.75)]
    pub extent: f64,
    /// Time at which the field is evaluated.
    #[arg(long, default_value_t = 0.5)]
    pub t_eval: f64,
    /// Euler steps used to find the end state.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
}

#[derive(Args, Debug, Clone)]
pub struct InterpArgs {
    #[command(flatten)]
    pub common: Common,
    /// Flow checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Intermediate frames between the two ends.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Sampler steps per frame.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Sampler matching the checkpoint paradigm.
    #[arg(long, default_value = "euler", value_parser = parse_sampler)]
    pub sampler: SamplerId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FeatureKind {
    Pixel,
    Classifier,
}

#[derive(Args, Debug, Clone)]
pub struct QualityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Generated samples per configuration.
    #[arg(long, default_value_t = 1_000)]
    pub count: usize,
    /// Feature space of the Fréchet distance; classifier needs image data.
    #[arg(long, value_enum, default_value = "pixel")]
    pub features: FeatureKind,
    /// Training steps of the feature classifier.
    #[arg(long, default_value_t = 1_000)]
    pub classifier_steps: usize,
}

#[derive(Args, Debug, Clone)]
pub struct StepsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub quality: QualityArgs,
    /// Flow checkpoint.
    #[arg(long)]
    pub ckpt_flow: PathBuf,
    /// Diffusion checkpoint with the same backbone.
    #[arg(long)]
    pub ckpt_diff: PathBuf,
    /// Comma-separated step counts N.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,50,100")]
    pub step_counts: Vec<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub quality: QualityArgs,
    /// Flow checkpoint.
    #[arg(long)]
    pub ckpt_flow: PathBuf,
    /// Euler step counts; each is paired with RK4 at a quarter of the steps.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub euler_steps: Vec<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct LatencyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint directory, or a run directory containing `ckpt/`.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Comma-separated samplers.
    #[arg(long, value_delimiter = ',', default_value = "euler", value_parser = parse_sampler)]
    pub samplers: Vec<SamplerId>,
    /// Comma-separated step counts N.
    #[arg(long, value_delimiter = ',', default_value = "10,50")]
    pub steps: Vec<usize>,
    /// Samples per timed call.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Untimed calls before measuring.
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    /// Timed calls; at least 3.
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ReproduceArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training steps per paradigm.
    #[arg(long, default_value_t = 5_000)]
    pub train_steps: usize,
    /// Items per batch.
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Toy training points.
    #[arg(long, default_value_t = 20_000)]
    pub train_count: usize,
    /// Held-out toy points for the Fréchet distance.
    #[arg(long, default_value_t = 5_000)]
    pub reference_count: usize,
    /// Generated samples per quality configuration.
    #[arg(long, default_value_t = 5_000)]
    pub eval_count: usize,
    /// Trajectories per curvature estimate.
    #[arg(long, default_value_t = 100)]
    pub curvature_n: usize,
    /// Timed calls per latency configuration.
    #[arg(long, default_value_t = 50)]
    pub latency_reps: usize,
    /// MNIST directory for the image-scale smoke run; skipped when unset.
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// Training steps of the image run.
    #[arg(long, default_value_t = 2_000)]
    pub mnist_steps: usize,
    /// Exit with status 1 when any criterion fails.
    #[arg(long)]
    pub strict: bool,
}

fn parse_toy(s: &str) -> Result<String, String> {
    ToyGenerator::parse(s).map(|g| g.name().to_string()).map_err(|e| e.to_string())
}

fn parse_paradigm(s: &str) -> Result<Paradigm, String> {
    s.parse().map_err(|e: rectiflow::Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: rectiflow::Error| e.to_string())
}

fn parse_sampler(s: &str) -> Result<SamplerId, String> {
    s.parse().map_err(|e: rectiflow::Error| e.to_string())
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Train(a) => &a.common,
            Command::Sample(a) => &a.common,
            Command::Analyze(AnalyzeCommand::Curvature(a)) => &a.common,
            Command::Analyze(AnalyzeCommand::Field(a)) => &a.common,
            Command::Analyze(AnalyzeCommand::Interp(a)) => &a.common,
            Command::Bench(BenchCommand::Steps(a)) => &a.common,
            Command::Bench(BenchCommand::Solver(a)) => &a.common,
            Command::Bench(BenchCommand::Latency(a)) => &a.common,
            Command::Reproduce(a) => &a.common,
        }
    }
}
