//! Flat dotted-key run configuration: `key = value` lines in files, the same
//! syntax in `--set` overrides, unknown keys rejected, and a sorted snapshot
//! written into every run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lbebm::dataio::Units;
use lbebm::error::{Error, Result};
use lbebm::model::ModelConfig;
use lbebm::sampler::LangevinConfig;
use lbebm::training::{ablation_wiring, Ablation, TrainConfig};

/// Every known key with its default (None = derived at resolve time).
const KEYS: &[(&str, Option<&str>)] = &[
    ("data.dataset", Some("synthetic-junction")),
    ("data.root", None),
    ("data.units", None),
    ("data.held_out", None),
    ("data.manifest", None),
    ("model.latent_dim", Some("16")),
    ("model.hidden", Some("200")),
    ("model.layers", Some("3")),
    ("pool.d", None),
    ("pool.dim", Some("64")),
    ("sampler.steps", Some("20")),
    ("sampler.step_size", Some("0.4")),
    ("sampler.seed", None),
    ("train.lr", Some("0.0003")),
    ("train.batch_size", None),
    ("train.epochs", Some("100")),
    ("train.seed", None),
    ("train.kl_weight", Some("1.0")),
    ("train.teacher_force_plan", Some("false")),
    ("train.ablation", Some("ebm-plan")),
    ("train.checkpoint_every", Some("0")),
    ("eval.k", Some("20")),
    ("eval.seed", None),
    ("eval.nll", Some("true")),
    ("eval.fde_mode", Some("independent")),
    ("synth.scenario", Some("y-junction")),
    ("synth.n_scenes", Some("1000")),
    ("synth.p_left", Some("0.5")),
    ("synth.speed", Some("0.5")),
    ("synth.noise_sigma", Some("0.05")),
    ("synth.seed", None),
];

/// Fully resolved flat configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        let mut values = BTreeMap::new();
        for (k, v) in KEYS {
            if let Some(v) = v {
                values.insert(k.to_string(), v.to_string());
            }
        }
        RunConfig { values }
    }

    fn known(key: &str) -> bool {
        KEYS.iter().any(|(k, _)| *k == key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !Self::known(key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let content =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for (lineno, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                details: "expected `key = value`".into(),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                details: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Apply `key=value` override pairs (the `--set` flag).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required config key {key:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e| Error::Config(format!("bad value for {key}: {raw:?} ({e})")))
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(_) => self.parse(key),
        }
    }

    /// Global seed fallback: explicit key, else `LBEBM_SEED`, else the default.
    fn seed_key(&self, key: &str, default: u64) -> Result<u64> {
        if self.get(key).is_some() {
            return self.parse(key);
        }
        if let Ok(env) = std::env::var("LBEBM_SEED") {
            return env
                .parse()
                .map_err(|_| Error::Config(format!("LBEBM_SEED {env:?} is not an integer")));
        }
        Ok(default)
    }

    pub fn dataset(&self) -> Result<&str> {
        self.require("data.dataset")
    }

    /// Units: explicit key wins, else derived from the dataset kind.
    pub fn units(&self) -> Result<Units> {
        if let Some(u) = self.get("data.units") {
            return u.parse();
        }
        Ok(match self.dataset()? {
            "sdd" => Units::Pixels,
            _ => Units::Meters,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let units = self.units()?;
        let pool_d_default = match units {
            Units::Meters => 5.0,
            Units::Pixels => 100.0,
        };
        let ablation: Ablation = self.parse("train.ablation")?;
        Ok(ModelConfig {
            latent_dim: self.parse("model.latent_dim")?,
            hidden: self.parse("model.hidden")?,
            layers: self.parse("model.layers")?,
            enc_dim: self.parse("pool.dim")?,
            pool_d: self.parse_or("pool.d", pool_d_default)?,
            wiring: ablation_wiring(ablation),
            ..Default::default()
        })
    }

    pub fn langevin_config(&self) -> Result<LangevinConfig> {
        Ok(LangevinConfig {
            steps: self.parse("sampler.steps")?,
            step_size: self.parse("sampler.step_size")?,
            noise_on: true,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let units = self.units()?;
        let defaults = TrainConfig::default_for(units);
        Ok(TrainConfig {
            lr: self.parse("train.lr")?,
            batch_size: self.parse_or("train.batch_size", defaults.batch_size)?,
            epochs: self.parse("train.epochs")?,
            seed: self.seed_key("train.seed", 1)?,
            kl_weight: self.parse("train.kl_weight")?,
            teacher_force_plan: self.parse("train.teacher_force_plan")?,
            langevin: self.langevin_config()?,
            checkpoint_every: self.parse("train.checkpoint_every")?,
        })
    }

    pub fn eval_k(&self) -> Result<usize> {
        self.parse("eval.k")
    }

    pub fn eval_seed(&self) -> Result<u64> {
        self.seed_key("eval.seed", 7)
    }

    pub fn eval_nll(&self) -> Result<bool> {
        self.parse("eval.nll")
    }

    pub fn eval_fde_mode(&self) -> Result<lbebm::evaluation::FdeMode> {
        self.parse("eval.fde_mode")
    }

    pub fn sampler_seed(&self) -> Result<u64> {
        self.seed_key("sampler.seed", 7)
    }

    pub fn synth_seed(&self) -> Result<u64> {
        self.seed_key("synth.seed", 0)
    }

    /// Snapshot in the same `key = value` format, fully resolved and sorted.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        fs::write(path, self.snapshot()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}
