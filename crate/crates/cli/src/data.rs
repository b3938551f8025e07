//! Dataset resolution from the run configuration.

use std::path::PathBuf;

use lbebm::dataio::{
    build_split, parse_trajectory_file, window_scenes, SplitMode, TrajectoryScene,
    WindowConfig, T_PAST, T_PRED,
};
use lbebm::error::{Error, Result};
use lbebm::synthetic::{self, Scenario, SyntheticSpec};

use crate::config::RunConfig;

pub struct DataBundle {
    pub train: Vec<TrajectoryScene>,
    pub test: Vec<TrajectoryScene>,
}

fn synth_spec(cfg: &RunConfig, scenario: Scenario) -> Result<SyntheticSpec> {
    let p_left: f64 = cfg
        .get("synth.p_left")
        .unwrap_or("0.5")
        .parse()
        .map_err(|_| Error::Config("bad synth.p_left".into()))?;
    Ok(SyntheticSpec {
        scenario,
        n_scenes: cfg
            .get("synth.n_scenes")
            .unwrap_or("1000")
            .parse()
            .map_err(|_| Error::Config("bad synth.n_scenes".into()))?,
        mode_probabilities: [p_left, 1.0 - p_left],
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
    })
}

fn root(cfg: &RunConfig) -> Result<PathBuf> {
    let r = cfg
        .get("data.root")
        .ok_or_else(|| Error::Config("data.root is required for this dataset".into()))?;
    let path = PathBuf::from(r);
    if !path.exists() {
        return Err(Error::Data(format!(
            "data path {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

/// Build (train, test) scene lists for the configured dataset.
///
/// Synthetic datasets hold out one quarter of the generated scenes (the
/// tail) as the test split; file-backed datasets use the real split logic.
pub fn load(cfg: &RunConfig) -> Result<DataBundle> {
    let units = cfg.units()?;
    match cfg.dataset()? {
        name @ ("synthetic-junction" | "synthetic-crossing" | "synthetic-straight") => {
            let scenario = match name {
                "synthetic-junction" => Scenario::YJunction,
                "synthetic-crossing" => Scenario::CrossingPair,
                _ => Scenario::Straight,
            };
            let spec = synth_spec(cfg, scenario)?;
            let (scenes, _labels) = synthetic::generate(&spec)?;
            let n_test = (scenes.len() / 4).max(1).min(scenes.len());
            let split = scenes.len() - n_test;
            let (train, test) = scenes.split_at(split);
            Ok(DataBundle {
                train: train.to_vec(),
                test: test.to_vec(),
            })
        }
        "eth-ucy" => {
            let held_out = cfg
                .get("data.held_out")
                .ok_or_else(|| Error::Config("data.held_out is required for eth-ucy".into()))?
                .to_string();
            let (train, test) =
                build_split(&root(cfg)?, &SplitMode::EthUcyLeaveOneOut { held_out }, units)?;
            Ok(DataBundle { train, test })
        }
        "sdd" => {
            let root = root(cfg)?;
            let manifest = cfg
                .get("data.manifest")
                .map(PathBuf::from)
                .unwrap_or_else(|| root.join("split.manifest"));
            let (train, test) = build_split(&root, &SplitMode::SddStandard { manifest }, units)?;
            Ok(DataBundle { train, test })
        }
        "cache" => {
            let root = root(cfg)?;
            let train = lbebm::dataio::load_scene_cache(&root.join("train.scenes"))?;
            let test = lbebm::dataio::load_scene_cache(&root.join("test.scenes"))?;
            Ok(DataBundle { train, test })
        }
        "file" => {
            let path = root(cfg)?;
            let tracks = parse_trajectory_file(&path, units)?;
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_default();
            let train = window_scenes(&tracks, &WindowConfig::default(), &label, units);
            let test = window_scenes(
                &tracks,
                &WindowConfig {
                    stride: T_PAST + T_PRED,
                    ..Default::default()
                },
                &label,
                units,
            );
            Ok(DataBundle { train, test })
        }
        other => Err(Error::Config(format!(
            "unknown data.dataset {other:?} (expected synthetic-junction|synthetic-crossing|synthetic-straight|eth-ucy|sdd|file|cache)"
        ))),
    }
}
