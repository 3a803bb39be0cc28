use rectiflow::backbone::{BackboneConfig, Paradigm};
use rectiflow::export::write_text;
use rectiflow::schedules::ScheduleParams;
use rectiflow::training::{loss_log_csv, train, LossRecord, TrainConfig};
use rectiflow::Result;
use serde_json::json;

use super::{check_item_shape, write_json, Data};
use crate::args::TrainArgs;
use crate::run::{Area, RunDir};

pub fn run(args: &TrainArgs, run: &RunDir) -> Result<()> {
    let seed = args.common.seed;
    let config = TrainConfig {
        paradigm: args.paradigm,
        steps: args.steps,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed,
        backbone: BackboneConfig::from_preset(args.preset).with_seed(seed),
        schedule: (args.paradigm == Paradigm::Diffusion).then_some(ScheduleParams {
            steps: args.diffusion_steps,
            beta_start: args.beta_start,
            beta_end: args.beta_end,
        }),
        log_every: args.log_every,
        clip_norm: args.clip_norm,
    };
    config.validate()?;
    let data = Data::load(&args.data, seed)?;
    check_item_shape(&config.backbone.in_shape, data.item_shape(), &format!("preset {}", args.preset.name()))?;

    let trained = train(&config, data.train())?;
    let ckpt = run.area(Area::Ckpt)?;
    trained.save(&ckpt)?;

    let log: Vec<LossRecord> = if run.deterministic {
        trained.log.iter().map(|r| LossRecord { wall_ms: 0.0, ..*r }).collect()
    } else {
        trained.log.clone()
    };
    write_text(run.artifact(Area::Reports, "loss.csv")?, &loss_log_csv(&log))?;
    write_json(
        &run.artifact(Area::Reports, "train.json")?,
        &json!({
            "paradigm": args.paradigm,
            "preset": args.preset.name(),
            "steps": config.steps,
            "params": trained.model.param_count(),
            "final_loss": trained.meta.final_loss,
        }),
    )?;
    println!(
        "trained {} {} for {} steps, final loss {:.5}",
        args.paradigm,
        args.preset.name(),
        config.steps,
        trained.meta.final_loss.unwrap_or(f64::NAN)
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}
