//! Trajectory dataset ingestion: parsing, windowing, normalization, plan
//! extraction, and train/test splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const T_PAST: usize = 8;
pub const T_PRED: usize = 12;
pub const PLAN_INDICES: [usize; 4] = [3, 6, 9, 12];

pub type Pos = [f64; 2];

/// Coordinate units of a dataset (meters for ETH-UCY, pixels for SDD).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Meters,
    Pixels,
}

impl std::fmt::Display for Units {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Units::Meters => write!(f, "meters"),
            Units::Pixels => write!(f, "pixels"),
        }
    }
}

impl std::str::FromStr for Units {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meters" => Ok(Units::Meters),
            "pixels" => Ok(Units::Pixels),
            other => Err(Error::Config(format!(
                "unknown units {other:?} (expected meters|pixels)"
            ))),
        }
    }
}

/// All observations of one agent, sorted by frame.
#[derive(Debug, Clone)]
pub struct RawTrack {
    pub agent_id: i64,
    pub frames: Vec<i64>,
    pub positions: Vec<Pos>,
}

/// One temporal window of one scene: co-present agents with a full past and
/// future. Coordinates may be raw (dataset units, zero offsets) or
/// normalized (per-agent, last observed position at the origin, with the
/// subtracted origins recorded in `origin_offsets`).
#[derive(Debug, Clone)]
pub struct TrajectoryScene {
    pub scene_id: String,
    pub units: Units,
    pub t_past: usize,
    pub t_pred: usize,
    /// Agent-major: positions[agent * t_past + t]
    pub past: Vec<Pos>,
    /// Agent-major: positions[agent * t_pred + t]
    pub future: Vec<Pos>,
    /// Per-agent origin subtracted so far; add back to recover dataset units.
    pub origin_offsets: Vec<Pos>,
}

impl TrajectoryScene {
    pub fn n_agents(&self) -> usize {
        self.origin_offsets.len()
    }

    pub fn past_pos(&self, agent: usize, t: usize) -> Pos {
        self.past[agent * self.t_past + t]
    }

    pub fn future_pos(&self, agent: usize, t: usize) -> Pos {
        self.future[agent * self.t_pred + t]
    }

    /// Past trajectories flattened per agent: `[n x (t_past * 2)]`.
    pub fn past_matrix(&self) -> Matrix {
        let n = self.n_agents();
        let mut m = Matrix::zeros(n, self.t_past * 2);
        for a in 0..n {
            for t in 0..self.t_past {
                let p = self.past_pos(a, t);
                m.row_mut(a)[2 * t] = p[0];
                m.row_mut(a)[2 * t + 1] = p[1];
            }
        }
        m
    }

    /// Future trajectories flattened per agent: `[n x (t_pred * 2)]`.
    pub fn future_matrix(&self) -> Matrix {
        let n = self.n_agents();
        let mut m = Matrix::zeros(n, self.t_pred * 2);
        for a in 0..n {
            for t in 0..self.t_pred {
                let p = self.future_pos(a, t);
                m.row_mut(a)[2 * t] = p[0];
                m.row_mut(a)[2 * t + 1] = p[1];
            }
        }
        m
    }

    /// Past positions in dataset units (offsets added back), agent-major.
    pub fn raw_past(&self) -> Vec<Pos> {
        let mut out = self.past.clone();
        for a in 0..self.n_agents() {
            let o = self.origin_offsets[a];
            for t in 0..self.t_past {
                out[a * self.t_past + t][0] += o[0];
                out[a * self.t_past + t][1] += o[1];
            }
        }
        out
    }
}

/// Sparse waypoint subsequence of the future used as the plan target.
#[derive(Debug, Clone)]
pub struct Plan {
    /// Agent-major: waypoints[agent * indices.len() + k]
    pub waypoints: Vec<Pos>,
    /// 1-based indices into the future.
    pub indices: Vec<usize>,
    pub n_agents: usize,
}

impl Plan {
    /// Waypoints flattened per agent: `[n x (len(indices) * 2)]`.
    pub fn matrix(&self) -> Matrix {
        let k = self.indices.len();
        let mut m = Matrix::zeros(self.n_agents, k * 2);
        for a in 0..self.n_agents {
            for j in 0..k {
                let p = self.waypoints[a * k + j];
                m.row_mut(a)[2 * j] = p[0];
                m.row_mut(a)[2 * j + 1] = p[1];
            }
        }
        m
    }
}

/// Parse a whitespace-separated trajectory file: `frame_id agent_id x y`
/// per line, `#` comments ignored. Tracks come back grouped per agent and
/// sorted by frame; a non-increasing frame within one agent is a data error.
pub fn parse_trajectory_file(path: &Path, units: Units) -> Result<Vec<RawTrack>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_trajectory_str(&content, &path.display().to_string(), units)
}

pub fn parse_trajectory_str(content: &str, label: &str, _units: Units) -> Result<Vec<RawTrack>> {
    let mut tracks: BTreeMap<i64, RawTrack> = BTreeMap::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: label.to_string(),
                line: lineno + 1,
                details: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let parse_int = |s: &str, what: &str| -> Result<i64> {
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                path: label.to_string(),
                line: lineno + 1,
                details: format!("bad {what} {s:?}"),
            })?;
            if !v.is_finite() || v.fract() != 0.0 {
                return Err(Error::Parse {
                    path: label.to_string(),
                    line: lineno + 1,
                    details: format!("{what} {s:?} is not an integer"),
                });
            }
            Ok(v as i64)
        };
        let frame = parse_int(fields[0], "frame_id")?;
        let agent = parse_int(fields[1], "agent_id")?;
        let parse_coord = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                path: label.to_string(),
                line: lineno + 1,
                details: format!("bad {what} {s:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: label.to_string(),
                    line: lineno + 1,
                    details: format!("non-finite {what}"),
                });
            }
            Ok(v)
        };
        let x = parse_coord(fields[2], "x")?;
        let y = parse_coord(fields[3], "y")?;

        let track = tracks.entry(agent).or_insert_with(|| RawTrack {
            agent_id: agent,
            frames: Vec::new(),
            positions: Vec::new(),
        });
        if let Some(&last) = track.frames.last() {
            if frame <= last {
                return Err(Error::Data(format!(
                    "{label}:{}: non-monotone frame {frame} for agent {agent} (previous {last})",
                    lineno + 1
                )));
            }
        }
        track.frames.push(frame);
        track.positions.push([x, y]);
    }
    Ok(tracks.into_values().collect())
}

/// Windowing parameters.
#[derive(Debug, Clone, Copy)]
pub struct WindowConfig {
    pub t_past: usize,
    pub t_pred: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            t_past: T_PAST,
            t_pred: T_PRED,
            stride: 1,
        }
    }
}

/// Slice the track stream into scenes. A scene keeps exactly the agents
/// observed at every one of the `t_past + t_pred` frames of its window;
/// agents with gaps are excluded from affected windows. Windows whose frame
/// slice is not equally spaced (gaps in the global frame grid) are skipped.
pub fn window_scenes(
    tracks: &[RawTrack],
    cfg: &WindowConfig,
    scene_prefix: &str,
    units: Units,
) -> Vec<TrajectoryScene> {
    let window = cfg.t_past + cfg.t_pred;
    let mut all_frames: BTreeSet<i64> = BTreeSet::new();
    for t in tracks {
        all_frames.extend(t.frames.iter().copied());
    }
    let frames: Vec<i64> = all_frames.into_iter().collect();
    if frames.len() < window {
        return Vec::new();
    }

    // Base frame step: the most common consecutive difference (smallest wins ties).
    let mut diff_counts: BTreeMap<i64, usize> = BTreeMap::new();
    for w in frames.windows(2) {
        *diff_counts.entry(w[1] - w[0]).or_insert(0) += 1;
    }
    let base_step = diff_counts
        .iter()
        .max_by_key(|(diff, count)| (**count, std::cmp::Reverse(**diff)))
        .map(|(d, _)| *d)
        .unwrap_or(1);

    let frame_index: Vec<HashMap<i64, usize>> = tracks
        .iter()
        .map(|t| t.frames.iter().enumerate().map(|(i, &f)| (f, i)).collect())
        .collect();

    let mut scenes = Vec::new();
    let mut start = 0usize;
    while start + window <= frames.len() {
        let slice = &frames[start..start + window];
        let arithmetic = slice.windows(2).all(|w| w[1] - w[0] == base_step);
        if arithmetic {
            let mut past = Vec::new();
            let mut future = Vec::new();
            let mut n = 0usize;
            for (track, index) in tracks.iter().zip(&frame_index) {
                let covered: Option<Vec<usize>> =
                    slice.iter().map(|f| index.get(f).copied()).collect();
                if let Some(idx) = covered {
                    for (k, &i) in idx.iter().enumerate() {
                        if k < cfg.t_past {
                            past.push(track.positions[i]);
                        } else {
                            future.push(track.positions[i]);
                        }
                    }
                    n += 1;
                }
            }
            if n >= 1 {
                scenes.push(TrajectoryScene {
                    scene_id: format!("{scene_prefix}:{}", slice[0]),
                    units,
                    t_past: cfg.t_past,
                    t_pred: cfg.t_pred,
                    past,
                    future,
                    origin_offsets: vec![[0.0, 0.0]; n],
                });
            }
        }
        start += cfg.stride;
    }
    scenes
}

/// Translate each agent so its last observed position sits at the origin.
/// The subtracted origin accumulates into `origin_offsets`, so the mapping
/// back to dataset units stays exact and the operation is idempotent.
pub fn normalize_scene(scene: &TrajectoryScene) -> TrajectoryScene {
    let mut out = scene.clone();
    let n = scene.n_agents();
    for a in 0..n {
        let origin = scene.past_pos(a, scene.t_past - 1);
        out.origin_offsets[a][0] += origin[0];
        out.origin_offsets[a][1] += origin[1];
        for t in 0..scene.t_past {
            out.past[a * scene.t_past + t][0] -= origin[0];
            out.past[a * scene.t_past + t][1] -= origin[1];
        }
        for t in 0..scene.t_pred {
            out.future[a * scene.t_pred + t][0] -= origin[0];
            out.future[a * scene.t_pred + t][1] -= origin[1];
        }
    }
    out
}

/// Exact inverse of [`normalize_scene`]: restore dataset units.
pub fn denormalize_scene(scene: &TrajectoryScene) -> TrajectoryScene {
    let mut out = scene.clone();
    let n = scene.n_agents();
    for a in 0..n {
        let o = scene.origin_offsets[a];
        for t in 0..scene.t_past {
            out.past[a * scene.t_past + t][0] += o[0];
            out.past[a * scene.t_past + t][1] += o[1];
        }
        for t in 0..scene.t_pred {
            out.future[a * scene.t_pred + t][0] += o[0];
            out.future[a * scene.t_pred + t][1] += o[1];
        }
        out.origin_offsets[a] = [0.0, 0.0];
    }
    out
}

/// Copy the future positions at the given 1-based time steps.
pub fn extract_plan(scene: &TrajectoryScene, indices: &[usize]) -> Result<Plan> {
    for &i in indices {
        if i < 1 || i > scene.t_pred {
            return Err(Error::Config(format!(
                "plan index {i} out of range 1..={}",
                scene.t_pred
            )));
        }
    }
    let n = scene.n_agents();
    let mut waypoints = Vec::with_capacity(n * indices.len());
    for a in 0..n {
        for &i in indices {
            waypoints.push(scene.future_pos(a, i - 1));
        }
    }
    Ok(Plan {
        waypoints,
        indices: indices.to_vec(),
        n_agents: n,
    })
}

/// How to derive the train/test file sets.
#[derive(Debug, Clone)]
pub enum SplitMode {
    /// Train on every scene-group directory except the held-out one.
    EthUcyLeaveOneOut { held_out: String },
    /// File lists from a manifest: lines `train <relpath>` / `test <relpath>`.
    SddStandard { manifest: PathBuf },
}

#[derive(Debug, Clone)]
pub struct SplitFiles {
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

fn list_txt_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = entry.path();
        if path.is_file() && path.extension().map(|e| e == "txt").unwrap_or(false) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Resolve the train/test file lists for a dataset root. Deterministic:
/// directory contents are sorted, manifests are read in order.
pub fn split_files(root: &Path, mode: &SplitMode) -> Result<SplitFiles> {
    match mode {
        SplitMode::EthUcyLeaveOneOut { held_out } => {
            let mut groups: Vec<String> = Vec::new();
            let rd = fs::read_dir(root).map_err(|e| Error::io(root.display().to_string(), e))?;
            for entry in rd {
                let entry = entry.map_err(|e| Error::io(root.display().to_string(), e))?;
                if entry.path().is_dir() {
                    groups.push(entry.file_name().to_string_lossy().to_string());
                }
            }
            groups.sort();
            if !groups.iter().any(|g| g == held_out) {
                return Err(Error::Config(format!(
                    "unknown scene name {held_out:?}; available: {groups:?}"
                )));
            }
            let mut train = Vec::new();
            let mut test = Vec::new();
            for g in &groups {
                let files = list_txt_files(&root.join(g))?;
                if g == held_out {
                    test.extend(files);
                } else {
                    train.extend(files);
                }
            }
            Ok(SplitFiles { train, test })
        }
        SplitMode::SddStandard { manifest } => {
            let content = fs::read_to_string(manifest)
                .map_err(|e| Error::io(manifest.display().to_string(), e))?;
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (lineno, line) in content.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (kind, rel) = line.split_once(char::is_whitespace).ok_or(Error::Parse {
                    path: manifest.display().to_string(),
                    line: lineno + 1,
                    details: "expected `train <path>` or `test <path>`".into(),
                })?;
                let path = root.join(rel.trim());
                match kind {
                    "train" => train.push(path),
                    "test" => test.push(path),
                    other => {
                        return Err(Error::Parse {
                            path: manifest.display().to_string(),
                            line: lineno + 1,
                            details: format!("unknown split kind {other:?}"),
                        })
                    }
                }
            }
            Ok(SplitFiles { train, test })
        }
    }
}

/// Load, window and return the (train, test) scene lists. Training windows
/// advance by stride 1; test windows are non-overlapping.
pub fn build_split(
    root: &Path,
    mode: &SplitMode,
    units: Units,
) -> Result<(Vec<TrajectoryScene>, Vec<TrajectoryScene>)> {
    let files = split_files(root, mode)?;
    let window = |paths: &[PathBuf], stride: usize| -> Result<Vec<TrajectoryScene>> {
        let mut scenes = Vec::new();
        for p in paths {
            let tracks = parse_trajectory_file(p, units)?;
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| p.display().to_string());
            let cfg = WindowConfig {
                stride,
                ..Default::default()
            };
            scenes.extend(window_scenes(&tracks, &cfg, &label, units));
        }
        Ok(scenes)
    };
    let train = window(&files.train, 1)?;
    let test = window(&files.test, T_PAST + T_PRED)?;
    Ok((train, test))
}

const CACHE_MAGIC: &[u8; 6] = b"LBEBMS";

/// Preprocessing cache: one file per split, scenes in the checkpoint-style
/// binary framing (counts, shapes, then row-major little-endian `f32`).
pub fn save_scene_cache(scenes: &[TrajectoryScene], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(scenes.len() as u32).to_le_bytes());
    for s in scenes {
        let id = s.scene_id.as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.push(match s.units {
            Units::Meters => 0,
            Units::Pixels => 1,
        });
        out.extend_from_slice(&(s.n_agents() as u32).to_le_bytes());
        out.extend_from_slice(&(s.t_past as u32).to_le_bytes());
        out.extend_from_slice(&(s.t_pred as u32).to_le_bytes());
        let write_pts = |out: &mut Vec<u8>, pts: &[Pos]| {
            for p in pts {
                out.extend_from_slice(&(p[0] as f32).to_le_bytes());
                out.extend_from_slice(&(p[1] as f32).to_le_bytes());
            }
        };
        write_pts(&mut out, &s.past);
        write_pts(&mut out, &s.future);
        write_pts(&mut out, &s.origin_offsets);
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_scene_cache(path: &Path) -> Result<Vec<TrajectoryScene>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bad = |msg: &str| Error::Data(format!("scene cache {}: {msg}", path.display()));
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(bad("truncated"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let take_u32 = |pos: &mut usize| -> Result<u32> {
        let s = take(pos, 4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };
    if take(&mut pos, 6)? != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let count = take_u32(&mut pos)? as usize;
    let mut scenes = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = take_u32(&mut pos)? as usize;
        let scene_id = std::str::from_utf8(take(&mut pos, id_len)?)
            .map_err(|_| bad("scene id is not UTF-8"))?
            .to_string();
        let units = match take(&mut pos, 1)?[0] {
            0 => Units::Meters,
            1 => Units::Pixels,
            other => return Err(bad(&format!("unknown units tag {other}"))),
        };
        let n = take_u32(&mut pos)? as usize;
        let t_past = take_u32(&mut pos)? as usize;
        let t_pred = take_u32(&mut pos)? as usize;
        let read_pts = |pos: &mut usize, count: usize| -> Result<Vec<Pos>> {
            let mut pts = Vec::with_capacity(count);
            for _ in 0..count {
                let sx = take(pos, 4)?;
                let x = f32::from_le_bytes([sx[0], sx[1], sx[2], sx[3]]) as f64;
                let sy = take(pos, 4)?;
                let y = f32::from_le_bytes([sy[0], sy[1], sy[2], sy[3]]) as f64;
                pts.push([x, y]);
            }
            Ok(pts)
        };
        let past = read_pts(&mut pos, n * t_past)?;
        let future = read_pts(&mut pos, n * t_pred)?;
        let origin_offsets = read_pts(&mut pos, n)?;
        scenes.push(TrajectoryScene {
            scene_id,
            units,
            t_past,
            t_pred,
            past,
            future,
            origin_offsets,
        });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(scenes)
}

/// Emit scenes in the plain-text track format, giving every scene its own
/// agent-id block and frame range so re-ingestion reproduces the scenes.
pub fn write_scenes_as_tracks(scenes: &[TrajectoryScene], path: &Path) -> Result<()> {
    let mut out = String::new();
    let mut next_agent: i64 = 0;
    let mut base_frame: i64 = 0;
    for scene in scenes {
        let raw = denormalize_scene(scene);
        let total = raw.t_past + raw.t_pred;
        // frame-major so interleaved agents exercise the grouping path
        for t in 0..total {
            for a in 0..raw.n_agents() {
                let p = if t < raw.t_past {
                    raw.past_pos(a, t)
                } else {
                    raw.future_pos(a, t - raw.t_past)
                };
                out.push_str(&format!(
                    "{} {} {} {}\n",
                    base_frame + t as i64,
                    next_agent + a as i64,
                    p[0],
                    p[1]
                ));
            }
        }
        next_agent += raw.n_agents() as i64;
        base_frame += total as i64 + 11;
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
