//! Command-line front end: train / evaluate / sample / gradcheck / synth.

mod config;
mod data;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use lbebm::checks::{run_gradcheck_suite, CheckScale};
use lbebm::dataio::{write_scenes_as_tracks, TrajectoryScene};
use lbebm::error::Error;
use lbebm::evaluation::{predict_scene, run_benchmark_with_mode, Predictor};
use lbebm::numerics::checkpoint;
use lbebm::synthetic::{self, SyntheticSpec};
use lbebm::training::{metrics_csv_string, train};
use lbebm::Matrix;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "lbebm",
    about = "Latent-belief energy-based trajectory forecasting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory
    Train(TrainArgs),
    /// Evaluate a checkpoint with best-of-K metrics
    Evaluate(EvalArgs),
    /// Export sampled trajectories for one scene (CSV + SVG)
    Sample(SampleArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic dataset as a plain-text trajectory file
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file with `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable): --set train.lr=0.001
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::defaults();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        cfg.apply_overrides(&self.set)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory (snapshot, metrics, checkpoints)
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ablation condition (ebm-plan, gaussian-plan, ebm-no-plan,
    /// gaussian-no-plan, ebm-plan-no-social)
    #[arg(long)]
    ablation: Option<String>,
    /// Dataset root path (data.root)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the windowed splits as binary scene caches under
    /// <out>/cache/ (re-loadable with data.dataset=cache)
    #[arg(long)]
    write_cache: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint file (defaults to reading the sibling run config.snapshot)
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Emit a machine-readable summary to stdout
    #[arg(long)]
    json: bool,
    /// Write the per-scene CSV here
    #[arg(long)]
    out: Option<PathBuf>,
    /// model | linear | echo (debug baselines)
    #[arg(long, default_value = "model")]
    predictor: String,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test-scene index or scene id
    #[arg(long, default_value = "0")]
    scene: String,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for <scene>.csv and <scene>.svg
    #[arg(long, default_value = "samples")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// tiny | small
    #[arg(long, default_value = "tiny")]
    scale: String,
    /// Corrupt one analytic gradient entry (harness self-test)
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// y-junction | crossing-pair | straight
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n_scenes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output trajectory file
    #[arg(long)]
    out: PathBuf,
    /// Also write per-scene mode labels here
    #[arg(long)]
    labels: Option<PathBuf>,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Config(_) => 1,
        Error::Parse { .. } | Error::Data(_) | Error::Io { .. } => 2,
        Error::Numerical(_) | Error::Dimension { .. } => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Synth(args) => cmd_synth(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn mkdir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let mut cfg = args.config.resolve()?;
    if let Some(epochs) = args.epochs {
        cfg.set("train.epochs", &epochs.to_string())?;
    }
    if let Some(seed) = args.seed {
        cfg.set("train.seed", &seed.to_string())?;
    }
    if let Some(ablation) = &args.ablation {
        cfg.set("train.ablation", ablation)?;
    }
    if let Some(data) = &args.data {
        cfg.set("data.root", &data.display().to_string())?;
    }

    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let bundle = data::load(&cfg)?;

    mkdir(&args.out)?;
    let ckpt_dir = args.out.join("checkpoints");
    mkdir(&ckpt_dir)?;
    mkdir(&args.out.join("samples"))?;
    cfg.write_snapshot(&args.out.join("config.snapshot"))?;
    if args.write_cache {
        let cache_dir = args.out.join("cache");
        mkdir(&cache_dir)?;
        lbebm::dataio::save_scene_cache(&bundle.train, &cache_dir.join("train.scenes"))?;
        lbebm::dataio::save_scene_cache(&bundle.test, &cache_dir.join("test.scenes"))?;
    }

    eprintln!(
        "training {} scenes ({} epochs, batch {}, ablation {})",
        bundle.train.len(),
        train_cfg.epochs,
        train_cfg.batch_size,
        cfg.get("train.ablation").unwrap_or("ebm-plan"),
    );
    let started = Instant::now();
    let outcome = train(&bundle.train, &model_cfg, &train_cfg, Some(&ckpt_dir))?;
    write_text(&args.out.join("metrics.csv"), &metrics_csv_string(&outcome.stats))?;
    if let Some(last) = outcome.stats.last() {
        eprintln!(
            "done in {:.1}s; final loss {:.4} (plan {:.4}, traj {:.4}, kl {:.4})",
            started.elapsed().as_secs_f64(),
            last.breakdown.total,
            last.breakdown.plan_recon,
            last.breakdown.traj_pred,
            last.breakdown.kl_to_prior,
        );
    } else {
        eprintln!("0 epochs requested; wrote the initialization checkpoint only");
    }
    Ok(())
}

/// Load the run config next to a checkpoint (if present), then apply file /
/// overrides. Returns (config, units the model was trained in).
fn eval_config(
    args_cfg: &ConfigArgs,
    checkpoint: &Path,
) -> Result<(RunConfig, lbebm::dataio::Units), Error> {
    let mut cfg = RunConfig::defaults();
    let sibling = checkpoint
        .parent()
        .and_then(|p| p.parent())
        .map(|p| p.join("config.snapshot"));
    if let Some(snap) = sibling.filter(|p| p.is_file()) {
        cfg.load_file(&snap)?;
    }
    if let Some(path) = &args_cfg.config {
        cfg.load_file(path)?;
    }
    let trained_units = cfg.units()?;
    cfg.apply_overrides(&args_cfg.set)?;
    Ok((cfg, trained_units))
}

fn cmd_evaluate(args: EvalArgs) -> Result<(), Error> {
    let (mut cfg, trained_units) = eval_config(&args.config, &args.checkpoint)?;
    if let Some(k) = args.k {
        cfg.set("eval.k", &k.to_string())?;
    }
    if let Some(seed) = args.seed {
        cfg.set("eval.seed", &seed.to_string())?;
    }

    let params = checkpoint::load(&args.checkpoint)?;
    let model_cfg = cfg.model_config()?;
    let langevin = cfg.langevin_config()?;
    let bundle = data::load(&cfg)?;
    let predictor = match args.predictor.as_str() {
        "model" => Predictor::Model {
            params: &params,
            model_cfg: &model_cfg,
            langevin,
        },
        "linear" => Predictor::Linear,
        "echo" => Predictor::GroundTruthEcho,
        other => {
            return Err(Error::Config(format!(
                "unknown predictor {other:?} (expected model|linear|echo)"
            )))
        }
    };
    let report = run_benchmark_with_mode(
        &predictor,
        &bundle.test,
        cfg.eval_k()?,
        cfg.eval_seed()?,
        cfg.eval_nll()?,
        Some(trained_units),
        cfg.eval_fde_mode()?,
    )?;

    if let Some(out) = &args.out {
        if let Some(dir) = out.parent() {
            if !dir.as_os_str().is_empty() {
                mkdir(dir)?;
            }
        }
        write_text(out, &report.per_scene_csv())?;
    }
    if args.json {
        let json = serde_json::json!({
            "ade": report.ade,
            "fde": report.fde,
            "k": report.k,
            "nll": report.nll,
        });
        println!("{json}");
    } else {
        print!("{}", report.summary());
    }
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn sample_csv(scene: &TrajectoryScene, samples: &[Matrix]) -> String {
    let mut out = String::from("sample_id,agent_id,t,x,y,kind\n");
    let n = scene.n_agents();
    for a in 0..n {
        for t in 0..scene.t_past {
            let p = scene.past_pos(a, t);
            out.push_str(&format!("-1,{a},{},{},{},past\n", t + 1, p[0], p[1]));
        }
    }
    for a in 0..n {
        for t in 0..scene.t_pred {
            let p = scene.future_pos(a, t);
            out.push_str(&format!(
                "-1,{a},{},{},{},truth\n",
                scene.t_past + t + 1,
                p[0],
                p[1]
            ));
        }
    }
    for (si, s) in samples.iter().enumerate() {
        for a in 0..n {
            for t in 0..scene.t_pred {
                out.push_str(&format!(
                    "{si},{a},{},{},{},pred\n",
                    scene.t_past + t + 1,
                    s.at(a, 2 * t),
                    s.at(a, 2 * t + 1)
                ));
            }
        }
    }
    out
}

fn cmd_sample(args: SampleArgs) -> Result<(), Error> {
    let (mut cfg, _) = eval_config(&args.config, &args.checkpoint)?;
    if let Some(seed) = args.seed {
        cfg.set("sampler.seed", &seed.to_string())?;
    }
    let k = match args.k {
        Some(k) => k,
        None => cfg.eval_k()?,
    };
    let params = checkpoint::load(&args.checkpoint)?;
    let model_cfg = cfg.model_config()?;
    let langevin = cfg.langevin_config()?;
    let bundle = data::load(&cfg)?;

    let scene = if let Ok(index) = args.scene.parse::<usize>() {
        bundle.test.get(index).cloned().ok_or_else(|| {
            Error::Data(format!(
                "scene index {index} out of range (test split has {} scenes)",
                bundle.test.len()
            ))
        })?
    } else {
        bundle
            .test
            .iter()
            .find(|s| s.scene_id == args.scene)
            .cloned()
            .ok_or_else(|| Error::Data(format!("scene {:?} not found", args.scene)))?
    };

    let predictor = Predictor::Model {
        params: &params,
        model_cfg: &model_cfg,
        langevin,
    };
    let mut noise = lbebm::sampler::NoiseStream::new(cfg.sampler_seed()?);
    let samples = predict_scene(&predictor, &scene, k, &mut noise)?;

    mkdir(&args.out)?;
    let stem = sanitize(&scene.scene_id);
    let csv_path = args.out.join(format!("{stem}.csv"));
    write_text(&csv_path, &sample_csv(&scene, &samples))?;
    let svg_path = args.out.join(format!("{stem}.svg"));
    write_text(&svg_path, &svg::render_scene(&scene, &samples))?;
    eprintln!(
        "wrote {} and {} ({} samples, {} agents)",
        csv_path.display(),
        svg_path.display(),
        samples.len(),
        scene.n_agents()
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Error> {
    let scale: CheckScale = args.scale.parse()?;
    let fault = if args.inject_fault {
        Some(("energy", "ebm.0.w", 0))
    } else {
        None
    };
    let started = Instant::now();
    let suite = run_gradcheck_suite(scale, args.tolerance, fault)?;
    print!("{}", suite.render());
    println!(
        "{} checks in {:.1}s at tolerance {:.1e}",
        suite.checks.len(),
        started.elapsed().as_secs_f64(),
        suite.tolerance
    );
    if !suite.passed() {
        return Err(Error::Numerical(
            "gradient check failed (see report above)".into(),
        ));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let mut cfg = args.config.resolve()?;
    if let Some(s) = &args.scenario {
        cfg.set("synth.scenario", s)?;
    }
    if let Some(n) = args.n_scenes {
        cfg.set("synth.n_scenes", &n.to_string())?;
    }
    if let Some(seed) = args.seed {
        cfg.set("synth.seed", &seed.to_string())?;
    }
    let scenario: synthetic::Scenario = cfg
        .get("synth.scenario")
        .unwrap_or("y-junction")
        .parse()?;
    let spec = SyntheticSpec {
        scenario,
        n_scenes: cfg
            .get("synth.n_scenes")
            .unwrap_or("1000")
            .parse()
            .map_err(|_| Error::Config("bad synth.n_scenes".into()))?,
        mode_probabilities: {
            let p: f64 = cfg
                .get("synth.p_left")
                .unwrap_or("0.5")
                .parse()
                .map_err(|_| Error::Config("bad synth.p_left".into()))?;
            [p, 1.0 - p]
        },
        speed: cfg
            .get("synth.speed")
            .unwrap_or("0.5")
            .parse()
            .map_err(|_| Error::Config("bad synth.speed".into()))?,
        noise_sigma: cfg
            .get("synth.noise_sigma")
            .unwrap_or("0.05")
            .parse()
            .map_err(|_| Error::Config("bad synth.noise_sigma".into()))?,
        seed: cfg.synth_seed()?,
    };
    let (scenes, labels) = synthetic::generate(&spec)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            mkdir(dir)?;
        }
    }
    write_scenes_as_tracks(&scenes, &args.out)?;
    if let Some(labels_path) = &args.labels {
        let mut text = String::from("scene_id,label\n");
        for (scene, label) in scenes.iter().zip(&labels) {
            text.push_str(&format!("{},{:?}\n", scene.scene_id, label));
        }
        write_text(labels_path, &text)?;
    }
    eprintln!("wrote {} scenes to {}", scenes.len(), args.out.display());
    Ok(())
}
