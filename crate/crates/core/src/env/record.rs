//! `VXE1` episode records.
//!
//! ```text
//! VXE1 task=locomotion rho=8 k=4 steps=50 bundle=2 voxel=0.01 dt=0.000118 ... trial=1 epoch=0 episode=3
//! -1.23456791e-1 4.00000000e0 ...
//! ...
//! reward 2.7154093810512 completed
//! ```
//!
//! One action line per design step, each component printed with nine
//! significant digits so the `f32` values read back exactly. The reward is
//! printed in shortest round-trip form. A file may hold several records
//! back to back.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{env_step, EnvError, EpisodeState, Evaluation, RawAction, TaskKind, TaskSpec};
use crate::physics::SimConfig;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Env(#[from] EnvError),
}

fn bad(line: usize, msg: impl Into<String>) -> RecordError {
    RecordError::Format { line, msg: msg.into() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub task: TaskSpec,
    pub trial: u64,
    pub epoch: u64,
    pub episode: u64,
    pub actions: Vec<RawAction>,
    pub reward: f64,
    pub diverged: bool,
}

impl EpisodeRecord {
    pub fn to_text(&self) -> String {
        let t = &self.task;
        let s = &t.sim;
        let mut out = String::new();
        let _ = write!(
            out,
            "VXE1 task={} rho={} k={} steps={} bundle={} voxel={:?} dt={:?} burn_in={:?} eval={:?} \
             damping={:?} global_damping={:?} gravity={:?} ground={} ground_stiffness={} stick_speed={:?} \
             actuate_burn_in={} frequency={:?} trial={} epoch={} episode={}",
            t.kind.name(),
            t.resolution,
            t.materials,
            t.steps,
            t.bundle_edge,
            t.voxel_size,
            s.dt,
            s.burn_in,
            s.eval,
            s.damping_ratio,
            s.global_damping,
            s.gravity,
            s.ground,
            s.ground_stiffness.map_or("auto".to_string(), |k| format!("{k:?}")),
            s.stick_speed,
            s.actuate_during_burn_in,
            s.frequency,
            self.trial,
            self.epoch,
            self.episode,
        );
        out.push('\n');
        for a in &self.actions {
            for (i, v) in a.0.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v:.8e}");
            }
            out.push('\n');
        }
        let status = if self.diverged { "diverged" } else { "completed" };
        let _ = writeln!(out, "reward {:?} {status}", self.reward);
        out
    }

    /// Parses every record in `text`.
    pub fn parse_all(text: &str) -> Result<Vec<EpisodeRecord>, RecordError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
        let mut records = Vec::new();
        while let Some((n, header)) = lines.next() {
            let (task, trial, epoch, episode) = parse_header(n, header)?;
            let dim = task.action_dim();
            let mut actions = Vec::with_capacity(task.steps);
            for _ in 0..task.steps {
                let (n, line) = lines.next().ok_or_else(|| bad(n, "record ends before all actions"))?;
                let values = line
                    .split_whitespace()
                    .map(|v| v.parse::<f32>().map_err(|_| bad(n, format!("bad action value {v:?}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                if values.len() != dim {
                    return Err(bad(n, format!("expected {dim} action components, got {}", values.len())));
                }
                actions.push(RawAction(values));
            }
            let (n, line) = lines.next().ok_or_else(|| bad(n, "missing reward line"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [tag, reward, status] = fields[..] else {
                return Err(bad(n, "expected `reward <value> <status>`"));
            };
            if tag != "reward" {
                return Err(bad(n, "expected reward line"));
            }
            let reward: f64 = reward.parse().map_err(|_| bad(n, "bad reward"))?;
            let diverged = match status {
                "completed" => false,
                "diverged" => true,
                _ => return Err(bad(n, format!("unknown status {status:?}"))),
            };
            records.push(EpisodeRecord { task, trial, epoch, episode, actions, reward, diverged });
        }
        Ok(records)
    }

    pub fn load_all(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>, RecordError> {
        Self::parse_all(&std::fs::read_to_string(path)?)
    }

    pub fn save_all(records: &[EpisodeRecord], path: impl AsRef<Path>) -> Result<(), RecordError> {
        let text: String = records.iter().map(EpisodeRecord::to_text).collect();
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Replays the actions from an empty grid without scoring.
    pub fn design(&self) -> Result<EpisodeState, RecordError> {
        let mut state = EpisodeState::new(&self.task);
        for a in &self.actions {
            state.design_step(a, &self.task)?;
        }
        Ok(state)
    }

    pub fn action_efficiency(&self) -> Result<f64, RecordError> {
        Ok(self.design()?.action_efficiency())
    }
}

fn parse_header(n: usize, line: &str) -> Result<(TaskSpec, u64, u64, u64), RecordError> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some("VXE1") {
        return Err(bad(n, "missing VXE1 magic"));
    }
    let mut kv = BTreeMap::new();
    for t in tokens {
        let (k, v) = t.split_once('=').ok_or_else(|| bad(n, format!("bad header field {t:?}")))?;
        if kv.insert(k, v).is_some() {
            return Err(bad(n, format!("duplicate header field {k:?}")));
        }
    }
    let mut take = |key: &str| kv.remove(key).ok_or_else(|| bad(n, format!("missing header field {key:?}")));
    fn num<T: std::str::FromStr>(n: usize, key: &str, v: &str) -> Result<T, RecordError> {
        v.parse().map_err(|_| bad(n, format!("bad value for {key}: {v:?}")))
    }
    let kind = TaskKind::parse(take("task")?).ok_or_else(|| bad(n, "unknown task"))?;
    let resolution = num(n, "rho", take("rho")?)?;
    let materials = num(n, "k", take("k")?)?;
    let steps = num(n, "steps", take("steps")?)?;
    let bundle_edge = num(n, "bundle", take("bundle")?)?;
    let voxel_size = num(n, "voxel", take("voxel")?)?;
    let ground_stiffness = match take("ground_stiffness")? {
        "auto" => None,
        v => Some(num(n, "ground_stiffness", v)?),
    };
    let sim = SimConfig {
        dt: num(n, "dt", take("dt")?)?,
        burn_in: num(n, "burn_in", take("burn_in")?)?,
        eval: num(n, "eval", take("eval")?)?,
        damping_ratio: num(n, "damping", take("damping")?)?,
        global_damping: num(n, "global_damping", take("global_damping")?)?,
        gravity: num(n, "gravity", take("gravity")?)?,
        ground: num(n, "ground", take("ground")?)?,
        ground_stiffness,
        stick_speed: num(n, "stick_speed", take("stick_speed")?)?,
        actuate_during_burn_in: num(n, "actuate_burn_in", take("actuate_burn_in")?)?,
        frequency: num(n, "frequency", take("frequency")?)?,
    };
    let trial = num(n, "trial", take("trial")?)?;
    let epoch = num(n, "epoch", take("epoch")?)?;
    let episode = num(n, "episode", take("episode")?)?;
    if let Some(k) = kv.keys().next() {
        return Err(bad(n, format!("unknown header field {k:?}")));
    }
    let task = TaskSpec { kind, resolution, materials, steps, bundle_edge, voxel_size, sim };
    task.validate().map_err(|e| bad(n, e.to_string()))?;
    Ok((task, trial, epoch, episode))
}

/// Result of re-running a recorded episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub state: EpisodeState,
    pub evaluation: Evaluation,
    /// Whether the recomputed reward matches the recorded one bit for bit.
    pub matches: bool,
}

/// Replays a record from the empty grid and re-scores the terminal design.
/// `frame_every` records a trajectory for locomotion tasks.
pub fn replay(record: &EpisodeRecord, frame_every: Option<usize>) -> Result<Replay, RecordError> {
    let mut state = EpisodeState::new(&record.task);
    let evaluation = if frame_every.is_some() {
        for a in &record.actions {
            state.design_step(a, &record.task)?;
        }
        super::evaluate_design(&state.grid, &record.task, frame_every)
    } else {
        let mut last = None;
        for a in &record.actions {
            last = env_step(&mut state, a, &record.task)?.evaluation;
        }
        last.ok_or_else(|| bad(0, "record has no actions"))?
    };
    let matches = evaluation.reward.to_bits() == record.reward.to_bits() && evaluation.diverged == record.diverged;
    Ok(Replay { state, evaluation, matches })
}
