//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test -p lbebm-cli --test acceptance -- --nocapture` to see
//! the per-criterion lines; the heavy criteria train desk-scale models and
//! take a few minutes combined.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lbebm::dataio::{
    build_split, normalize_scene, SplitMode, TrajectoryScene, Units,
};
use lbebm::evaluation::{ade_fde, best_of_k, kde_nll, run_benchmark, BandwidthRule, Predictor};
use lbebm::model::{self, Heads, ModelConfig};
use lbebm::numerics::params::ParamStore;
use lbebm::sampler::{
    langevin_from_prior, LangevinConfig, NoiseStream, QuadraticEnergy,
};
use lbebm::synthetic::{self, min_cotemporal_distance, Scenario, SyntheticSpec};
use lbebm::training::{ablation_wiring, ebm_grad, train, Ablation, TrainConfig};
use lbebm::Matrix;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lbebm")
}

fn pass(name: &str) {
    println!("criterion {name}: PASS");
}

// ---------------------------------------------------------------------------
// shared desk-scale setup for the trained criteria
// ---------------------------------------------------------------------------

fn desk_model(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        latent_dim: 16,
        hidden: 64,
        layers: 3,
        enc_dim: 32,
        pool_d: 5.0,
        wiring: ablation_wiring(ablation),
        ..Default::default()
    }
}

fn desk_train(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.0003,
        batch_size: 70,
        epochs: 15,
        seed,
        kl_weight: 1.0,
        teacher_force_plan: false,
        langevin: LangevinConfig::default(),
        checkpoint_every: 0,
    }
}

fn junction_spec(n_scenes: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        scenario: Scenario::YJunction,
        n_scenes,
        mode_probabilities: [0.5, 0.5],
        speed: 0.5,
        noise_sigma: 0.05,
        seed,
    }
}

/// Per-agent best-of-k and best-of-1 ADE plus normalized samples per scene.
struct JunctionEval {
    coverage: f64,
    ade_best20: f64,
    ade_best1: f64,
}

fn eval_junction(
    params: &ParamStore,
    cfg: &ModelConfig,
    scenes: &[TrajectoryScene],
    seed: u64,
) -> JunctionEval {
    let mut noise = NoiseStream::new(seed);
    let mut scene_samples = Vec::new();
    let mut sum20 = 0.0;
    let mut sum1 = 0.0;
    let mut agents = 0.0;
    for scene in scenes {
        let norm = normalize_scene(scene);
        let truth = norm.future_matrix();
        let samples = model::forward_generate(
            scene,
            params,
            cfg,
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
        scene_samples.push(samples);
    }
    JunctionEval {
        coverage: synthetic::mode_coverage(&scene_samples, Scenario::YJunction).unwrap(),
        ade_best20: sum20 / agents,
        ade_best1: sum1 / agents,
    }
}

// ---------------------------------------------------------------------------
// criterion 1: gradient fidelity via the gradcheck command
// ---------------------------------------------------------------------------

#[test]
fn c1_gradient_fidelity() {
    let started = Instant::now();
    let out = Command::new(bin())
        .arg("gradcheck")
        .arg("--tolerance")
        .arg("1e-4")
        .output()
        .expect("spawn lbebm gradcheck");
    let elapsed = started.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "gradcheck failed:\n{text}{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(elapsed < 60.0, "gradcheck took {elapsed:.1}s (limit 60s)");
    assert!(text.contains("full_objective[ebm-plan]"));
    pass(&format!("1 (gradient fidelity, {elapsed:.1}s)"));
}

// ---------------------------------------------------------------------------
// criterion 2: sampler stationarity against known stationary distributions
// ---------------------------------------------------------------------------

#[test]
fn c2_sampler_stationarity() {
    let chains = 10_000usize;
    let dim = 16usize;
    let cfg = LangevinConfig {
        steps: 2000,
        step_size: 0.01,
        noise_on: true,
    };

    // C == 0 through the real cost head: a zero-weight MLP
    let model_cfg = ModelConfig {
        latent_dim: dim,
        hidden: 8,
        layers: 2,
        enc_dim: 2,
        ..Default::default()
    };
    let heads = Heads::new(&model_cfg);
    let mut params = model::init_params(&model_cfg, 1).unwrap();
    for e in params.iter_mut() {
        e.values.data.fill(0.0);
    }
    let ctx = Matrix::zeros(chains, model_cfg.enc_dim);
    let energy = model::EbmEnergy::new(&params, &heads, ctx);
    let mut noise = NoiseStream::new(2024);
    let out = langevin_from_prior(&energy, chains, dim, &cfg, &mut noise).unwrap();
    for d in 0..dim {
        let mut mean = 0.0;
        for r in 0..chains {
            mean += out.at(r, d);
        }
        mean /= chains as f64;
        let mut var = 0.0;
        for r in 0..chains {
            var += (out.at(r, d) - mean).powi(2);
        }
        var /= (chains - 1) as f64;
        assert!(mean.abs() < 0.05, "dim {d}: mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "dim {d}: var {var}");
    }

    // planted quadratic energies: stationary variance 1/(1+a)
    for a in [1.0f64, 3.0] {
        let mut noise = NoiseStream::new(3000 + a as u64);
        let out =
            langevin_from_prior(&QuadraticEnergy { a }, chains, dim, &cfg, &mut noise).unwrap();
        let target = 1.0 / (1.0 + a);
        for d in 0..dim {
            let mut mean = 0.0;
            for r in 0..chains {
                mean += out.at(r, d);
            }
            mean /= chains as f64;
            let mut var = 0.0;
            for r in 0..chains {
                var += (out.at(r, d) - mean).powi(2);
            }
            var /= (chains - 1) as f64;
            assert!(
                (var - target).abs() < 0.1,
                "a = {a}, dim {d}: var {var} vs {target}"
            );
        }
    }
    pass("2 (sampler stationarity)");
}

// ---------------------------------------------------------------------------
// criterion 3: exact positive/negative cancellation in ebm_grad
// ---------------------------------------------------------------------------

#[test]
fn c3_ebm_gradient_cancellation() {
    let cfg = desk_model(Ablation::EbmPlan);
    let heads = Heads::new(&cfg);
    let mut params = model::init_params(&cfg, 5).unwrap();
    let mut noise = NoiseStream::new(6);
    let z = noise.normal_matrix(7, cfg.latent_dim);
    let ctx = noise.normal_matrix(7, cfg.enc_dim);
    params.zero_grads();
    ebm_grad(&z, &z, &ctx, &mut params, &heads).unwrap();
    for e in params.iter() {
        for (i, &g) in e.grads.data.iter().enumerate() {
            assert!(g == 0.0, "{}[{}] = {g} (expected exact zero)", e.name, i);
        }
    }
    pass("3 (EBM gradient cancellation)");
}

// ---------------------------------------------------------------------------
// criterion 4: metric oracles and best-of-k monotonicity
// ---------------------------------------------------------------------------

#[test]
fn c4_metric_oracles() {
    let mut noise = NoiseStream::new(44);
    for _ in 0..100 {
        let n = 1 + (noise.uniform_usize(4));
        let k = 2 + noise.uniform_usize(10);
        let pred = noise.normal_matrix(n, 24);
        let truth = noise.normal_matrix(n, 24);
        let samples: Vec<Matrix> = (0..k).map(|_| noise.normal_matrix(n, 24)).collect();

        // brute-force ade/fde
        let (ade, fde) = ade_fde(&pred, &truth).unwrap();
        for a in 0..n {
            let mut acc = 0.0;
            for t in 0..12 {
                let dx = pred.at(a, 2 * t) - truth.at(a, 2 * t);
                let dy = pred.at(a, 2 * t + 1) - truth.at(a, 2 * t + 1);
                acc += (dx * dx + dy * dy).sqrt();
            }
            assert!((ade[a] - acc / 12.0).abs() < 1e-9);
            let dx = pred.at(a, 22) - truth.at(a, 22);
            let dy = pred.at(a, 23) - truth.at(a, 23);
            assert!((fde[a] - (dx * dx + dy * dy).sqrt()).abs() < 1e-9);
        }

        // brute-force best-of-k
        let (b_ade, b_fde) = best_of_k(&samples, &truth).unwrap();
        for a in 0..n {
            let mut min_a = f64::INFINITY;
            let mut min_f = f64::INFINITY;
            for s in &samples {
                let (sa, sf) = ade_fde(s, &truth).unwrap();
                min_a = min_a.min(sa[a]);
                min_f = min_f.min(sf[a]);
            }
            assert!((b_ade[a] - min_a).abs() < 1e-9);
            assert!((b_fde[a] - min_f).abs() < 1e-9);
        }

        // brute-force KDE NLL (plain density sum, no log-sum-exp)
        let got = kde_nll(&samples, &truth, BandwidthRule::Scott).unwrap();
        let kf = k as f64;
        let mut agent_acc = 0.0;
        for a in 0..n {
            let mut step_acc = 0.0;
            for t in 0..12 {
                let xs: Vec<f64> = samples.iter().map(|s| s.at(a, 2 * t)).collect();
                let ys: Vec<f64> = samples.iter().map(|s| s.at(a, 2 * t + 1)).collect();
                let mx = xs.iter().sum::<f64>() / kf;
                let my = ys.iter().sum::<f64>() / kf;
                let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / (kf - 1.0);
                let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / (kf - 1.0);
                let h = ((0.5 * (vx + vy)).sqrt() * kf.powf(-1.0 / 6.0)).max(1e-3);
                let mut dens = 0.0;
                for j in 0..samples.len() {
                    let d2 = (truth.at(a, 2 * t) - xs[j]).powi(2)
                        + (truth.at(a, 2 * t + 1) - ys[j]).powi(2);
                    dens += (-d2 / (2.0 * h * h)).exp() / (2.0 * std::f64::consts::PI * h * h);
                }
                dens /= kf;
                step_acc += -dens.ln();
            }
            agent_acc += step_acc / 12.0;
        }
        let oracle_nll = agent_acc / n as f64;
        assert!(
            (got.nll - oracle_nll).abs() < 1e-9,
            "{} vs {oracle_nll}",
            got.nll
        );
    }

    // monotonicity on nested sample sets
    for trial in 0..100 {
        let mut noise = NoiseStream::new(4000 + trial);
        let n = 1 + noise.uniform_usize(3);
        let truth = noise.normal_matrix(n, 24);
        let samples: Vec<Matrix> = (0..12).map(|_| noise.normal_matrix(n, 24)).collect();
        let mut last_ade = f64::INFINITY;
        let mut last_fde = f64::INFINITY;
        for k in 1..=samples.len() {
            let (ade, fde) = best_of_k(&samples[..k], &truth).unwrap();
            let mean_ade = ade.iter().sum::<f64>() / n as f64;
            let mean_fde = fde.iter().sum::<f64>() / n as f64;
            assert!(mean_ade <= last_ade + 1e-15, "trial {trial} k {k}");
            assert!(mean_fde <= last_fde + 1e-15, "trial {trial} k {k}");
            last_ade = mean_ade;
            last_fde = mean_fde;
        }
    }
    pass("4 (metric oracles + monotonicity)");
}

// ---------------------------------------------------------------------------
// criterion 5: multimodality at desk scale
// ---------------------------------------------------------------------------

#[test]
fn c5_multimodality_desk_scale() {
    let (train_scenes, _) = synthetic::generate(&junction_spec(2000, 100)).unwrap();
    let (test_scenes, _) = synthetic::generate(&junction_spec(200, 999)).unwrap();
    let cfg = desk_model(Ablation::EbmPlan);

    let started = Instant::now();
    let outcome = train(&train_scenes, &cfg, &desk_train(1), None).unwrap();
    let train_secs = started.elapsed().as_secs_f64();
    assert!(
        train_secs < 1800.0,
        "training took {train_secs:.0}s (budget 30 min)"
    );

    let eval = eval_junction(&outcome.params, &cfg, &test_scenes, 4242);
    assert!(
        eval.coverage >= 0.9,
        "mode coverage {:.3} < 0.9",
        eval.coverage
    );
    assert!(
        eval.ade_best20 <= 0.5 * eval.ade_best1,
        "best-of-20 ADE {:.4} > 0.5 * best-of-1 ADE {:.4}",
        eval.ade_best20,
        eval.ade_best1
    );
    pass(&format!(
        "5 (multimodality: coverage {:.3}, ADE20/ADE1 {:.3}, train {:.0}s)",
        eval.coverage,
        eval.ade_best20 / eval.ade_best1,
        train_secs
    ));
}

// ---------------------------------------------------------------------------
// criterion 6: ablation ordering over 3 seeds
// ---------------------------------------------------------------------------

#[test]
fn c6_ablation_ordering() {
    let (train_scenes, _) = synthetic::generate(&junction_spec(2000, 100)).unwrap();
    let (test_scenes, _) = synthetic::generate(&junction_spec(200, 999)).unwrap();

    let mean_ade = |ablation: Ablation| -> f64 {
        let cfg = desk_model(ablation);
        let mut acc = 0.0;
        for seed in [1u64, 2, 3] {
            let outcome = train(&train_scenes, &cfg, &desk_train(seed), None).unwrap();
            let eval = eval_junction(&outcome.params, &cfg, &test_scenes, 4242);
            acc += eval.ade_best20;
        }
        acc / 3.0
    };

    let ebm_plan = mean_ade(Ablation::EbmPlan);
    let gaussian_plan = mean_ade(Ablation::GaussianPlan);
    let ebm_no_plan = mean_ade(Ablation::EbmNoPlan);
    assert!(
        ebm_plan <= gaussian_plan,
        "ebm-plan {ebm_plan:.4} > gaussian-plan {gaussian_plan:.4}"
    );
    assert!(
        ebm_plan <= ebm_no_plan,
        "ebm-plan {ebm_plan:.4} > ebm-no-plan {ebm_no_plan:.4}"
    );
    pass(&format!(
        "6 (ablation ordering: ebm-plan {ebm_plan:.4} <= gaussian-plan {gaussian_plan:.4}, <= ebm-no-plan {ebm_no_plan:.4})"
    ));
}

// ---------------------------------------------------------------------------
// criterion 7: social compliance on the crossing pair
// ---------------------------------------------------------------------------

fn crossing_collision_rate(
    params: &ParamStore,
    cfg: &ModelConfig,
    scenes: &[TrajectoryScene],
    seed: u64,
) -> f64 {
    let mut noise = NoiseStream::new(seed);
    let mut collisions = 0usize;
    for scene in scenes {
        let norm = normalize_scene(scene);
        let truth = norm.future_matrix();
        let samples = model::forward_generate(
            scene,
            params,
            cfg,
            &LangevinConfig::default(),
            &mut noise,
            20,
        )
        .unwrap();
        // the best-of-20 prediction: the sample with the lowest joint ADE
        let mut best_idx = 0;
        let mut best = f64::INFINITY;
        for (i, s) in samples.iter().enumerate() {
            let (ade, _) = ade_fde(s, &truth).unwrap();
            let mean = ade.iter().sum::<f64>() / ade.len() as f64;
            if mean < best {
                best = mean;
                best_idx = i;
            }
        }
        let denorm = model::denormalize_sample(&samples[best_idx], scene);
        if min_cotemporal_distance(&denorm) < 0.25 {
            collisions += 1;
        }
    }
    collisions as f64 / scenes.len() as f64
}

#[test]
fn c7_social_compliance() {
    let spec = SyntheticSpec {
        scenario: Scenario::CrossingPair,
        n_scenes: 2000,
        mode_probabilities: [0.5, 0.5],
        speed: 0.5,
        noise_sigma: 0.05,
        seed: 200,
    };
    let (train_scenes, _) = synthetic::generate(&spec).unwrap();
    let (test_scenes, _) = synthetic::generate(&SyntheticSpec {
        n_scenes: 200,
        seed: 888,
        ..spec
    })
    .unwrap();

    // ground truth never collides, by construction
    for s in &test_scenes {
        assert!(min_cotemporal_distance(&s.future_matrix()) >= 0.5);
    }

    let rate_of = |ablation: Ablation| -> f64 {
        let cfg = desk_model(ablation);
        let outcome = train(&train_scenes, &cfg, &desk_train(1), None).unwrap();
        crossing_collision_rate(&outcome.params, &cfg, &test_scenes, 777)
    };
    let ebm_rate = rate_of(Ablation::EbmPlan);
    let no_social_rate = rate_of(Ablation::EbmPlanNoSocial);
    assert!(ebm_rate <= 0.05, "collision rate {ebm_rate:.3} > 5%");
    assert!(
        no_social_rate >= ebm_rate,
        "no-social rate {no_social_rate:.3} beat the social model {ebm_rate:.3}"
    );
    pass(&format!(
        "7 (social compliance: ebm-plan rate {ebm_rate:.3}, no-social rate {no_social_rate:.3})"
    ));
}

// ---------------------------------------------------------------------------
// criterion 8: benchmark plumbing via the linear baseline
// ---------------------------------------------------------------------------

fn eth_ucy_root() -> PathBuf {
    std::env::var("LBEBM_ETH_UCY_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|_| {
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/eth_ucy")
        })
}

#[test]
fn c8_linear_baseline_plumbing() {
    // always-on leg: the exact ingestion path (emit -> parse -> window ->
    // non-overlapping test split -> metrics) on a noise-free linear world,
    // where constant-velocity extrapolation is exact
    let dir = tempfile::tempdir().unwrap();
    let (scenes, _) = synthetic::generate(&SyntheticSpec {
        scenario: Scenario::Straight,
        n_scenes: 50,
        noise_sigma: 0.0,
        seed: 17,
        ..Default::default()
    })
    .unwrap();
    let file = dir.path().join("straight.txt");
    lbebm::dataio::write_scenes_as_tracks(&scenes, &file).unwrap();
    let tracks = lbebm::dataio::parse_trajectory_file(&file, Units::Meters).unwrap();
    let test = lbebm::dataio::window_scenes(
        &tracks,
        &lbebm::dataio::WindowConfig {
            stride: 20,
            ..Default::default()
        },
        "straight",
        Units::Meters,
    );
    assert!(!test.is_empty());
    let report = run_benchmark(&Predictor::Linear, &test, 20, 1, false, None).unwrap();
    assert!(report.ade < 1e-9, "linear world ADE {}", report.ade);
    assert!(report.fde < 1e-9);

    // real-data leg: ZARA1 against the Table-2 Linear row, when mounted
    let root = eth_ucy_root();
    if !root.join("zara1").is_dir() {
        println!(
            "criterion 8 (benchmark plumbing): PASS on synthetic leg; ZARA1 leg SKIPPED \
             (no dataset at {}; set LBEBM_ETH_UCY_ROOT)",
            root.display()
        );
        return;
    }
    let (_, test) = build_split(
        &root,
        &SplitMode::EthUcyLeaveOneOut {
            held_out: "zara1".into(),
        },
        Units::Meters,
    )
    .unwrap();
    let report = run_benchmark(&Predictor::Linear, &test, 20, 1, false, None).unwrap();
    let (ade_ref, fde_ref) = (0.62, 1.21);
    assert!(
        (report.ade - ade_ref).abs() <= 0.15 * ade_ref,
        "ZARA1 linear ADE {:.3} outside {ade_ref} +/- 15%",
        report.ade
    );
    assert!(
        (report.fde - fde_ref).abs() <= 0.15 * fde_ref,
        "ZARA1 linear FDE {:.3} outside {fde_ref} +/- 15%",
        report.fde
    );
    pass(&format!(
        "8 (benchmark plumbing: ZARA1 linear {:.3}/{:.3})",
        report.ade, report.fde
    ));
}

// ---------------------------------------------------------------------------
// criterion 9: bit-level determinism of runs
// ---------------------------------------------------------------------------

#[test]
fn c9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let train_args = |out: &str| {
        vec![
            "train".to_string(),
            "--out".into(),
            out.into(),
            "--seed".into(),
            "11".into(),
            "--epochs".into(),
            "3".into(),
            "--set".into(),
            "synth.n_scenes=64".into(),
            "--set".into(),
            "model.hidden=16".into(),
            "--set".into(),
            "model.latent_dim=4".into(),
            "--set".into(),
            "model.layers=2".into(),
            "--set".into(),
            "pool.dim=8".into(),
            "--set".into(),
            "train.batch_size=16".into(),
            "--set".into(),
            "sampler.steps=5".into(),
        ]
    };
    for out in ["r1", "r2"] {
        let status = Command::new(bin())
            .current_dir(dir.path())
            .args(train_args(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(
        read("r1/checkpoints/final.lbebm"),
        read("r2/checkpoints/final.lbebm"),
        "checkpoints differ between same-seed runs"
    );
    // metrics identical except the wall-time column
    let strip = |p: &str| -> Vec<String> {
        String::from_utf8(read(p))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip("r1/metrics.csv"), strip("r2/metrics.csv"));

    // evaluation repeats byte-identically too
    let eval = |csv: &str| -> (Vec<u8>, Vec<u8>) {
        let out = Command::new(bin())
            .current_dir(dir.path())
            .args([
                "evaluate",
                "--checkpoint",
                "r1/checkpoints/final.lbebm",
                "--k",
                "5",
                "--seed",
                "3",
                "--out",
                csv,
                "--json",
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        (out.stdout, read(csv))
    };
    let (j1, c1) = eval("m1.csv");
    let (j2, c2) = eval("m2.csv");
    assert_eq!(j1, j2);
    assert_eq!(c1, c2);
    pass("9 (determinism)");
}
