//! Parameterized toy worlds with known ground-truth structure: a bimodal
//! Y-junction, a crossing pair that swerves to avoid collision, and straight
//! constant-velocity walkers. Desk-scale stand-ins for the benchmark scenes,
//! with mode labels recorded for evaluation and never fed to the model.

use rand::Rng;

use crate::dataio::{TrajectoryScene, Units, T_PAST, T_PRED};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sampler::NoiseStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    YJunction,
    CrossingPair,
    Straight,
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "y-junction" => Ok(Scenario::YJunction),
            "crossing-pair" => Ok(Scenario::CrossingPair),
            "straight" => Ok(Scenario::Straight),
            other => Err(Error::Config(format!(
                "unknown scenario {other:?} (expected y-junction|crossing-pair|straight)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub scenario: Scenario,
    pub n_scenes: usize,
    /// (left, right) branch probabilities; must sum to 1.
    pub mode_probabilities: [f64; 2],
    /// Units per time step; one unit is roughly a meter.
    pub speed: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            scenario: Scenario::YJunction,
            n_scenes: 1000,
            mode_probabilities: [0.5, 0.5],
            speed: 0.5,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeLabel {
    Left,
    Right,
    None,
}

/// Closest co-temporal approach between any two agents over the rows of a
/// flattened `[n x (T*2)]` trajectory block.
pub fn min_cotemporal_distance(traj: &Matrix) -> f64 {
    let steps = traj.cols / 2;
    let mut min_d = f64::INFINITY;
    for i in 0..traj.rows {
        for j in i + 1..traj.rows {
            for t in 0..steps {
                let dx = traj.at(i, 2 * t) - traj.at(j, 2 * t);
                let dy = traj.at(i, 2 * t + 1) - traj.at(j, 2 * t + 1);
                min_d = min_d.min((dx * dx + dy * dy).sqrt());
            }
        }
    }
    min_d
}

const CROSSING_MIN_SEPARATION: f64 = 0.5;

fn scene_from_points(
    id: String,
    past: Vec<[f64; 2]>,
    future: Vec<[f64; 2]>,
    n: usize,
) -> TrajectoryScene {
    TrajectoryScene {
        scene_id: id,
        units: Units::Meters,
        t_past: T_PAST,
        t_pred: T_PRED,
        past,
        future,
        origin_offsets: vec![[0.0, 0.0]; n],
    }
}

/// Generate scenes plus their mode labels.
pub fn generate(spec: &SyntheticSpec) -> Result<(Vec<TrajectoryScene>, Vec<ModeLabel>)> {
    let p_sum = spec.mode_probabilities[0] + spec.mode_probabilities[1];
    if (p_sum - 1.0).abs() > 1e-9 || spec.mode_probabilities.iter().any(|&p| p < 0.0) {
        return Err(Error::Config(format!(
            "mode probabilities must be non-negative and sum to 1, got {:?}",
            spec.mode_probabilities
        )));
    }
    if spec.noise_sigma < 0.0 {
        return Err(Error::Config("noise_sigma must be >= 0".into()));
    }
    let mut noise = NoiseStream::new(spec.seed);
    let mut scenes = Vec::with_capacity(spec.n_scenes);
    let mut labels = Vec::with_capacity(spec.n_scenes);
    for idx in 0..spec.n_scenes {
        let (scene, label) = match spec.scenario {
            Scenario::YJunction => junction_scene(spec, idx, &mut noise),
            Scenario::CrossingPair => crossing_scene(spec, idx, &mut noise)?,
            Scenario::Straight => straight_scene(spec, idx, &mut noise),
        };
        scenes.push(scene);
        labels.push(label);
    }
    Ok((scenes, labels))
}

fn jitter(noise: &mut NoiseStream, sigma: f64) -> [f64; 2] {
    if sigma == 0.0 {
        [0.0, 0.0]
    } else {
        [noise.normal() * sigma, noise.normal() * sigma]
    }
}

/// Walk straight along +x for the past, then branch left or right at 45
/// degrees. The branch point (last observed position) is the origin.
fn junction_scene(
    spec: &SyntheticSpec,
    idx: usize,
    noise: &mut NoiseStream,
) -> (TrajectoryScene, ModeLabel) {
    let left = noise.rng().gen_bool(spec.mode_probabilities[0]);
    let label = if left { ModeLabel::Left } else { ModeLabel::Right };
    let sign = if left { 1.0 } else { -1.0 };
    let s = spec.speed;
    let diag = std::f64::consts::FRAC_1_SQRT_2;
    let mut past = Vec::with_capacity(T_PAST);
    for t in 0..T_PAST {
        let j = jitter(noise, spec.noise_sigma);
        past.push([-s * (T_PAST - 1 - t) as f64 + j[0], j[1]]);
    }
    let mut future = Vec::with_capacity(T_PRED);
    for k in 1..=T_PRED {
        let j = jitter(noise, spec.noise_sigma);
        future.push([
            s * diag * k as f64 + j[0],
            sign * s * diag * k as f64 + j[1],
        ]);
    }
    (
        scene_from_points(format!("junction:{idx}"), past, future, 1),
        label,
    )
}

/// Two agents on a collision course. Agent B approaches on a per-scene side
/// (the mode); both swerve apart so the ground truth never comes within
/// [`CROSSING_MIN_SEPARATION`]. Which way A must swerve is only observable
/// from B's trajectory, so the avoidance is a social cue, not an individual
/// habit.
fn crossing_scene(
    spec: &SyntheticSpec,
    idx: usize,
    noise: &mut NoiseStream,
) -> Result<(TrajectoryScene, ModeLabel)> {
    let s = spec.speed;
    let meet_x = 4.0 * s * 2.0; // B's last observed x; they meet halfway in time
    for attempt in 0..100 {
        let left = noise.rng().gen_bool(spec.mode_probabilities[0]);
        let side = if left { 1.0 } else { -1.0 };
        let label = if left { ModeLabel::Left } else { ModeLabel::Right };
        let bump = |k: f64| 0.35 * (-(k - 4.0) * (k - 4.0) / 6.0).exp();

        let mut past = Vec::with_capacity(2 * T_PAST);
        // agent A heads +x, ends at the origin
        for t in 0..T_PAST {
            let j = jitter(noise, spec.noise_sigma);
            past.push([-s * (T_PAST - 1 - t) as f64 + j[0], j[1]]);
        }
        // agent B heads -x on its side, ends at (meet_x, side * 0.15)
        for t in 0..T_PAST {
            let j = jitter(noise, spec.noise_sigma);
            past.push([
                meet_x + s * (T_PAST - 1 - t) as f64 + j[0],
                side * 0.15 + j[1],
            ]);
        }
        let mut future_a = Vec::with_capacity(T_PRED);
        let mut future_b = Vec::with_capacity(T_PRED);
        for k in 1..=T_PRED {
            let kf = k as f64;
            let ja = jitter(noise, spec.noise_sigma);
            future_a.push([s * kf + ja[0], -side * bump(kf) + ja[1]]);
            let jb = jitter(noise, spec.noise_sigma);
            future_b.push([
                meet_x - s * kf + jb[0],
                side * (0.15 + bump(kf)) + jb[1],
            ]);
        }
        let mut future = future_a;
        future.extend(future_b);
        let scene = scene_from_points(format!("crossing:{idx}"), past, future, 2);
        if min_cotemporal_distance(&scene.future_matrix()) >= CROSSING_MIN_SEPARATION {
            return Ok((scene, label));
        }
        if attempt == 99 {
            break;
        }
    }
    Err(Error::Numerical(
        "crossing_pair: separation constraint unreachable; noise_sigma too large".into(),
    ))
}

/// Constant-velocity walkers with random headings and offsets.
fn straight_scene(
    spec: &SyntheticSpec,
    idx: usize,
    noise: &mut NoiseStream,
) -> (TrajectoryScene, ModeLabel) {
    let n = noise.rng().gen_range(1..=3usize);
    let mut past = Vec::with_capacity(n * T_PAST);
    let mut future = Vec::with_capacity(n * T_PRED);
    for _ in 0..n {
        let angle: f64 = noise.rng().gen_range(0.0..std::f64::consts::TAU);
        let start = [
            noise.rng().gen_range(-5.0..5.0),
            noise.rng().gen_range(-5.0..5.0),
        ];
        let v = [angle.cos() * spec.speed, angle.sin() * spec.speed];
        for t in 0..T_PAST {
            let j = jitter(noise, spec.noise_sigma);
            past.push([start[0] + v[0] * t as f64 + j[0], start[1] + v[1] * t as f64 + j[1]]);
        }
        for k in 1..=T_PRED {
            let t = (T_PAST - 1 + k) as f64;
            let j = jitter(noise, spec.noise_sigma);
            future.push([start[0] + v[0] * t + j[0], start[1] + v[1] * t + j[1]]);
        }
    }
    (
        scene_from_points(format!("straight:{idx}"), past, future, n),
        ModeLabel::None,
    )
}

/// Classify one sampled trajectory (normalized frame, `[n x (T*2)]`) to a
/// junction branch by the sign of the final lateral displacement; exact zero
/// breaks to the left.
pub fn classify_mode(sample: &Matrix) -> ModeLabel {
    let last_y = sample.at(0, sample.cols - 1);
    if last_y >= 0.0 {
        ModeLabel::Left
    } else {
        ModeLabel::Right
    }
}

/// Fraction of scenes whose K samples include both branches.
pub fn mode_coverage(scene_samples: &[Vec<Matrix>], scenario: Scenario) -> Result<f64> {
    if scenario != Scenario::YJunction {
        return Err(Error::Usage(
            "mode_coverage: geometry must be the Y-junction".into(),
        ));
    }
    if scene_samples.is_empty() {
        return Ok(0.0);
    }
    let mut covered = 0usize;
    for samples in scene_samples {
        let mut left = false;
        let mut right = false;
        for s in samples {
            match classify_mode(s) {
                ModeLabel::Left => left = true,
                ModeLabel::Right => right = true,
                ModeLabel::None => {}
            }
        }
        if left && right {
            covered += 1;
        }
    }
    Ok(covered as f64 / scene_samples.len() as f64)
}
