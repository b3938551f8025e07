//! Best-of-K displacement metrics, KDE negative log-likelihood, and the
//! benchmark driver.

use crate::dataio::{self, TrajectoryScene, Units};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{self, ModelConfig};
use crate::numerics::params::ParamStore;
use crate::sampler::{LangevinConfig, NoiseStream};

/// Euclidean distance between step `t` of two flattened trajectory rows.
fn step_dist(a: &[f64], b: &[f64], t: usize) -> f64 {
    let dx = a[2 * t] - b[2 * t];
    let dy = a[2 * t + 1] - b[2 * t + 1];
    (dx * dx + dy * dy).sqrt()
}

/// Per-agent average and final displacement errors between flattened
/// `[n x (T*2)]` predictions and ground truth, in dataset units.
pub fn ade_fde(pred: &Matrix, truth: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.shape() != truth.shape() || !pred.cols.is_multiple_of(2) {
        return Err(Error::dimension(
            "ade_fde",
            format!("{:?} vs {:?}", pred.shape(), truth.shape()),
        ));
    }
    let steps = pred.cols / 2;
    let mut ade = Vec::with_capacity(pred.rows);
    let mut fde = Vec::with_capacity(pred.rows);
    for a in 0..pred.rows {
        let (p, t) = (pred.row(a), truth.row(a));
        let mut acc = 0.0;
        for s in 0..steps {
            acc += step_dist(p, t, s);
        }
        ade.push(acc / steps as f64);
        fde.push(step_dist(p, t, steps - 1));
    }
    Ok((ade, fde))
}

/// How the reported FDE relates to the reported ADE under best-of-K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdeMode {
    /// Minimum FDE over the K samples, independent of which minimized ADE.
    #[default]
    Independent,
    /// FDE of the sample that minimized ADE.
    JointWithAde,
}

impl std::str::FromStr for FdeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(FdeMode::Independent),
            "joint" => Ok(FdeMode::JointWithAde),
            other => Err(Error::Config(format!(
                "unknown fde mode {other:?} (expected independent|joint)"
            ))),
        }
    }
}

/// Per-agent best-of-K minima, taken independently for ADE and FDE. Ties
/// resolve to the lowest sample index.
pub fn best_of_k(samples: &[Matrix], truth: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    best_of_k_with_mode(samples, truth, FdeMode::Independent)
}

pub fn best_of_k_with_mode(
    samples: &[Matrix],
    truth: &Matrix,
    mode: FdeMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Usage("best_of_k: k = 0".into()));
    }
    let n = truth.rows;
    let mut best_ade = vec![f64::INFINITY; n];
    let mut best_fde = vec![f64::INFINITY; n];
    for sample in samples {
        let (ade, fde) = ade_fde(sample, truth)?;
        for a in 0..n {
            if ade[a] < best_ade[a] {
                best_ade[a] = ade[a];
                if mode == FdeMode::JointWithAde {
                    best_fde[a] = fde[a];
                }
            }
            if mode == FdeMode::Independent && fde[a] < best_fde[a] {
                best_fde[a] = fde[a];
            }
        }
    }
    Ok((best_ade, best_fde))
}

/// Bandwidth selection for the per-step 2-D Gaussian KDE.
#[derive(Debug, Clone, Copy)]
pub enum BandwidthRule {
    /// Scott's rule on the sample cloud: `h = sigma_hat * k^(-1/6)`,
    /// with `sigma_hat` pooled isotropically over x and y.
    Scott,
    Fixed(f64),
}

/// Floor keeping degenerate sample clouds evaluable, in dataset units.
pub const BANDWIDTH_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct KdeOutcome {
    pub nll: f64,
    /// (agent, step) cells whose bandwidth hit the floor.
    pub floored_cells: usize,
}

/// Mean negative log-likelihood of the ground truth under per-(agent, step)
/// Gaussian KDEs over the K sampled positions: averaged over steps, then
/// agents.
pub fn kde_nll(samples: &[Matrix], truth: &Matrix, rule: BandwidthRule) -> Result<KdeOutcome> {
    if samples.len() < 2 {
        return Err(Error::Usage("kde_nll: need at least 2 samples".into()));
    }
    for s in samples {
        if s.shape() != truth.shape() {
            return Err(Error::dimension(
                "kde_nll",
                format!("sample {:?} vs truth {:?}", s.shape(), truth.shape()),
            ));
        }
    }
    let k = samples.len() as f64;
    let steps = truth.cols / 2;
    let mut floored = 0usize;
    let mut agent_sum = 0.0;
    for a in 0..truth.rows {
        let mut step_sum = 0.0;
        for t in 0..steps {
            let xs: Vec<f64> = samples.iter().map(|s| s.at(a, 2 * t)).collect();
            let ys: Vec<f64> = samples.iter().map(|s| s.at(a, 2 * t + 1)).collect();
            let h = match rule {
                BandwidthRule::Fixed(h) => h.max(BANDWIDTH_FLOOR),
                BandwidthRule::Scott => {
                    let mean_x = xs.iter().sum::<f64>() / k;
                    let mean_y = ys.iter().sum::<f64>() / k;
                    let var_x =
                        xs.iter().map(|v| (v - mean_x).powi(2)).sum::<f64>() / (k - 1.0);
                    let var_y =
                        ys.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / (k - 1.0);
                    let sigma = (0.5 * (var_x + var_y)).sqrt();
                    let h = sigma * k.powf(-1.0 / 6.0);
                    if h < BANDWIDTH_FLOOR {
                        floored += 1;
                        BANDWIDTH_FLOOR
                    } else {
                        h
                    }
                }
            };
            let qx = truth.at(a, 2 * t);
            let qy = truth.at(a, 2 * t + 1);
            // -log[(1/(2 pi h^2 k)) sum_j exp(-d_j^2 / (2 h^2))], via log-sum-exp
            let logs: Vec<f64> = xs
                .iter()
                .zip(&ys)
                .map(|(&sx, &sy)| {
                    let d2 = (qx - sx).powi(2) + (qy - sy).powi(2);
                    -d2 / (2.0 * h * h)
                })
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = if max.is_finite() {
                max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
            } else {
                f64::NEG_INFINITY
            };
            let log_density = lse - (2.0 * std::f64::consts::PI * h * h * k).ln();
            step_sum += -log_density;
        }
        agent_sum += step_sum / steps as f64;
    }
    Ok(KdeOutcome {
        nll: agent_sum / truth.rows as f64,
        floored_cells: floored,
    })
}

/// Per-scene metric row.
#[derive(Debug, Clone)]
pub struct SceneReport {
    pub scene_id: String,
    pub n_agents: usize,
    pub ade: f64,
    pub fde: f64,
    pub nll: Option<f64>,
}

/// Aggregated metrics. ADE/FDE average the per-agent best-of-K minima over
/// every agent of every scene.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub ade: f64,
    pub fde: f64,
    pub k: usize,
    pub nll: Option<f64>,
    pub per_scene: Vec<SceneReport>,
    pub units: Units,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "scenes: {}  k: {}  units: {}\nADE: {:.4}\nFDE: {:.4}\n",
            self.per_scene.len(),
            self.k,
            self.units,
            self.ade,
            self.fde
        );
        if let Some(nll) = self.nll {
            s.push_str(&format!("KDE NLL: {:.4}\n", nll));
        }
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }

    pub fn per_scene_csv(&self) -> String {
        let mut out = String::from("scene_id,n_agents,ade,fde,nll\n");
        for r in &self.per_scene {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.scene_id,
                r.n_agents,
                r.ade,
                r.fde,
                r.nll.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

/// What produces candidate futures for a scene.
pub enum Predictor<'a> {
    /// The learned model: pool, sample the latent prior, decode.
    Model {
        params: &'a ParamStore,
        model_cfg: &'a ModelConfig,
        langevin: LangevinConfig,
    },
    /// Constant-velocity extrapolation from the last two observed positions.
    Linear,
    /// Echoes the ground truth (plumbing check).
    GroundTruthEcho,
}

fn linear_prediction(scene: &TrajectoryScene) -> Matrix {
    let n = scene.n_agents();
    let mut out = Matrix::zeros(n, scene.t_pred * 2);
    for a in 0..n {
        let last = scene.past_pos(a, scene.t_past - 1);
        let prev = scene.past_pos(a, scene.t_past - 2);
        let v = [last[0] - prev[0], last[1] - prev[1]];
        for t in 0..scene.t_pred {
            out.row_mut(a)[2 * t] = last[0] + v[0] * (t + 1) as f64;
            out.row_mut(a)[2 * t + 1] = last[1] + v[1] * (t + 1) as f64;
        }
    }
    out
}

/// Draw `k` candidate futures for a scene, in dataset units.
pub fn predict_scene(
    predictor: &Predictor,
    scene: &TrajectoryScene,
    k: usize,
    noise: &mut NoiseStream,
) -> Result<Vec<Matrix>> {
    match predictor {
        Predictor::Model {
            params,
            model_cfg,
            langevin,
        } => {
            let samples = model::forward_generate(scene, params, model_cfg, langevin, noise, k)?;
            // samples come back normalized; the offsets that undo the
            // generator's internal normalization are the ones recorded by
            // normalizing the scene we handed it
            let norm = dataio::normalize_scene(scene);
            Ok(samples
                .iter()
                .map(|s| model::denormalize_sample(s, &norm))
                .collect())
        }
        Predictor::Linear => Ok(vec![linear_prediction(scene); k]),
        Predictor::GroundTruthEcho => Ok(vec![scene.future_matrix(); k]),
    }
}

/// Run the best-of-K protocol over a test split. Fully seeded; per-scene
/// rows plus the pooled per-agent aggregate.
pub fn run_benchmark(
    predictor: &Predictor,
    scenes: &[TrajectoryScene],
    k: usize,
    seed: u64,
    with_nll: bool,
    expected_units: Option<Units>,
) -> Result<MetricReport> {
    run_benchmark_with_mode(
        predictor,
        scenes,
        k,
        seed,
        with_nll,
        expected_units,
        FdeMode::Independent,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn run_benchmark_with_mode(
    predictor: &Predictor,
    scenes: &[TrajectoryScene],
    k: usize,
    seed: u64,
    with_nll: bool,
    expected_units: Option<Units>,
    fde_mode: FdeMode,
) -> Result<MetricReport> {
    if k == 0 {
        return Err(Error::Usage("run_benchmark: k = 0".into()));
    }
    if scenes.is_empty() {
        return Err(Error::Data("run_benchmark: empty test split".into()));
    }
    let units = scenes[0].units;
    if let Some(expected) = expected_units {
        if expected != units {
            return Err(Error::Config(format!(
                "unit mismatch: checkpoint config says {expected}, dataset is {units}"
            )));
        }
    }
    let mut noise = NoiseStream::new(seed);
    let mut per_scene = Vec::with_capacity(scenes.len());
    let mut warnings = Vec::new();
    let mut sum_ade = 0.0;
    let mut sum_fde = 0.0;
    let mut sum_nll = 0.0;
    let mut total_agents = 0usize;
    let mut floored_total = 0usize;

    for scene in scenes {
        if scene.units != units {
            return Err(Error::Data(format!(
                "scene {} has units {} but split started with {units}",
                scene.scene_id, scene.units
            )));
        }
        let raw = dataio::denormalize_scene(scene);
        let truth = raw.future_matrix();
        let samples = predict_scene(predictor, &raw, k, &mut noise)?;
        let (ade, fde) = best_of_k_with_mode(&samples, &truth, fde_mode)?;
        let scene_ade = ade.iter().sum::<f64>() / ade.len() as f64;
        let scene_fde = fde.iter().sum::<f64>() / fde.len() as f64;
        let nll = if with_nll && k >= 2 {
            let outcome = kde_nll(&samples, &truth, BandwidthRule::Scott)?;
            floored_total += outcome.floored_cells;
            sum_nll += outcome.nll * raw.n_agents() as f64;
            Some(outcome.nll)
        } else {
            None
        };
        sum_ade += ade.iter().sum::<f64>();
        sum_fde += fde.iter().sum::<f64>();
        total_agents += raw.n_agents();
        per_scene.push(SceneReport {
            scene_id: raw.scene_id.clone(),
            n_agents: raw.n_agents(),
            ade: scene_ade,
            fde: scene_fde,
            nll,
        });
    }
    if floored_total > 0 {
        warnings.push(format!(
            "KDE bandwidth floored at {BANDWIDTH_FLOOR} in {floored_total} (agent, step) cells"
        ));
    }
    Ok(MetricReport {
        ade: sum_ade / total_agents as f64,
        fde: sum_fde / total_agents as f64,
        k,
        nll: if with_nll && k >= 2 {
            Some(sum_nll / total_agents as f64)
        } else {
            None
        },
        per_scene,
        units,
        warnings,
    })
}
