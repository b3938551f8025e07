//! Train a small model on the bimodal Y-junction world and report mode
//! coverage plus best-of-20 error, end to end through the library API.
//!
//! Run with: cargo run --release --example junction_demo

use lbebm::dataio::normalize_scene;
use lbebm::evaluation::best_of_k;
use lbebm::model::{forward_generate, ModelConfig};
use lbebm::sampler::{LangevinConfig, NoiseStream};
use lbebm::synthetic::{generate, mode_coverage, Scenario, SyntheticSpec};
use lbebm::training::{train, TrainConfig};

fn main() {
    let spec = SyntheticSpec {
        scenario: Scenario::YJunction,
        n_scenes: 2000,
        mode_probabilities: [0.5, 0.5],
        speed: 0.5,
        noise_sigma: 0.05,
        seed: 100,
    };
    let (train_scenes, _) = generate(&spec).unwrap();
    let (test_scenes, _) = generate(&SyntheticSpec {
        n_scenes: 200,
        seed: 999,
        ..spec
    })
    .unwrap();

    let model_cfg = ModelConfig {
        hidden: 64,
        enc_dim: 32,
        ..Default::default()
    };
    let train_cfg = TrainConfig {
        epochs: 15,
        batch_size: 70,
        seed: 1,
        ..TrainConfig::default_for(lbebm::dataio::Units::Meters)
    };

    eprintln!("training on {} scenes...", train_scenes.len());
    let outcome = train(&train_scenes, &model_cfg, &train_cfg, None).unwrap();
    for s in outcome.stats.iter().step_by(5) {
        eprintln!("epoch {:2}  loss {:.4}", s.epoch, s.breakdown.total);
    }

    let mut noise = NoiseStream::new(4242);
    let mut per_scene = Vec::new();
    let mut sum20 = 0.0;
    let mut sum1 = 0.0;
    let mut agents = 0.0;
    for scene in &test_scenes {
        let truth = normalize_scene(scene).future_matrix();
        let samples = forward_generate(
            scene,
            &outcome.params,
            &model_cfg,
            &LangevinConfig::default(),
            &mut noise,
            20,
        )
        .unwrap();
        let (b20, _) = best_of_k(&samples, &truth).unwrap();
        let (b1, _) = best_of_k(&samples[..1], &truth).unwrap();
        sum20 += b20.iter().sum::<f64>();
        sum1 += b1.iter().sum::<f64>();
        agents += b20.len() as f64;
        per_scene.push(samples);
    }
    let coverage = mode_coverage(&per_scene, Scenario::YJunction).unwrap();
    println!(
        "coverage@20 {:.3}   best-of-20 ADE {:.4}   best-of-1 ADE {:.4}",
        coverage,
        sum20 / agents,
        sum1 / agents
    );
}
