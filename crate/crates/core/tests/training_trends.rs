//! Training-loop trends on point-mass data.

use std::collections::BTreeMap;

use rectiflow::backbone::{BackboneConfig, Paradigm};
use rectiflow::data::make_toy;
use rectiflow::geometry::path_metrics;
use rectiflow::samplers::{initial_noise, integrate_euler, Record};
use rectiflow::training::{train, train_observed, TrainConfig};

fn point_mass(x: f64, seed: u64) -> rectiflow::data::ToyDataset {
    let params = BTreeMap::from([("mean_x".to_string(), x), ("var".to_string(), 0.0)]);
    make_toy("single_gaussian", 4096, seed, &params).unwrap()
}

fn flow_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 256,
        seed,
        log_every: 50,
        ..TrainConfig::new(Paradigm::Flow, BackboneConfig::toy_mlp().with_seed(seed))
    }
}

/// The output layer starts at zero, so sampled paths start motionless
/// (energy 0) and approach the straight-line optimum `‖x₀‖²` for a target at
/// the origin. The gap to that optimum must shrink at every checkpoint.
#[test]
fn kinetic_energy_approaches_straight_line_optimum() {
    let checkpoints = [50, 100, 200, 400];
    for seed in 0..2 {
        let x0 = initial_noise::<f32>(&[2], 256, 99);
        let optimum = x0.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / 256.0;
        let mut gaps = Vec::new();
        train_observed(&flow_config(400, seed), &point_mass(0.0, seed), |step, model| {
            if checkpoints.contains(&step) {
                let traj = integrate_euler(model, &x0, 20, Record::ALL)?;
                let m = path_metrics(&traj)?;
                let ke = m.iter().map(|p| p.kinetic_energy).sum::<f64>() / m.len() as f64;
                gaps.push((optimum - ke).abs());
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(gaps.len(), checkpoints.len());
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "seed {seed}: {gaps:?}");
    }
}

#[test]
fn flow_loss_drops_on_offset_point_mass() {
    let trained = train(&flow_config(2000, 1), &point_mass(3.0, 1)).unwrap();
    let initial = trained.losses[0];
    let tail = &trained.losses[trained.losses.len() - 100..];
    let late = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(late < 0.2 * initial, "initial {initial}, late {late}");
}
