//! Line-oriented experiment configuration.
//!
//! ```text
//! # comment
//! task.kind = volume
//! task.resolution = 10
//! ppo.batch_size = 1050
//! run.seeds = 1, 2, 3
//! ```
//!
//! `task.kind` selects the defaults for every other key; unknown keys and
//! duplicate keys are errors. [`ExperimentConfig::to_text`] writes every key
//! back out in a fixed order, which is what run manifests record.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::env::{TaskKind, TaskSpec};
use crate::physics::SimConfig;
use crate::ppo::PpoConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{key}: {msg}")]
    Value { key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub ppo: PpoConfig,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    /// Worker threads; 0 lets the pool decide. `VOXELFORGE_WORKERS` wins.
    pub workers: usize,
    /// Episodes per policy in evaluation pipelines.
    pub eval_episodes: usize,
}

impl ExperimentConfig {
    pub fn defaults(kind: TaskKind) -> Self {
        let (task, ppo) = match kind {
            TaskKind::Volume => (TaskSpec::volume(20, 100), PpoConfig::volume()),
            TaskKind::Locomotion => (TaskSpec::locomotion(20, 100, SimConfig::default()), PpoConfig::locomotion()),
        };
        Self { task, ppo, seeds: vec![1], out: None, workers: 0, eval_episodes: 100 }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, msg: "expected `section.key = value`".into() })?;
            let key = key.trim();
            if key.split('.').count() != 2 || key.split('.').any(str::is_empty) {
                return Err(ConfigError::Syntax { line: i + 1, msg: format!("bad key {key:?}") });
            }
            if entries.insert(key.to_string(), (i + 1, value.trim().to_string())).is_some() {
                return Err(ConfigError::Syntax { line: i + 1, msg: format!("duplicate key {key}") });
            }
        }
        let kind = match entries.remove("task.kind") {
            Some((_, v)) => TaskKind::parse(&v)
                .ok_or_else(|| ConfigError::Value { key: "task.kind".into(), msg: format!("unknown task {v:?}") })?,
            None => return Err(ConfigError::Invalid("task.kind is required".into())),
        };
        let mut cfg = Self::defaults(kind);
        for (key, (_, value)) in &entries {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn v<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::Value { key: key.into(), msg: format!("cannot parse {value:?}") })
        }
        let Self { task: t, ppo: p, seeds, out, workers, eval_episodes } = self;
        let s = &mut t.sim;
        match key {
            "task.resolution" => t.resolution = v(key, value)?,
            "task.steps" => t.steps = v(key, value)?,
            "task.bundle_edge" => t.bundle_edge = v(key, value)?,
            "task.voxel_size" => t.voxel_size = v(key, value)?,
            "sim.dt" => s.dt = v(key, value)?,
            "sim.burn_in" => s.burn_in = v(key, value)?,
            "sim.eval" => s.eval = v(key, value)?,
            "sim.damping_ratio" => s.damping_ratio = v(key, value)?,
            "sim.global_damping" => s.global_damping = v(key, value)?,
            "sim.gravity" => s.gravity = v(key, value)?,
            "sim.ground" => s.ground = v(key, value)?,
            "sim.ground_stiffness" => {
                s.ground_stiffness = if value == "auto" { None } else { Some(v(key, value)?) }
            }
            "sim.stick_speed" => s.stick_speed = v(key, value)?,
            "sim.actuate_during_burn_in" => s.actuate_during_burn_in = v(key, value)?,
            "sim.frequency" => s.frequency = v(key, value)?,
            "ppo.learning_rate" => p.learning_rate = v(key, value)?,
            "ppo.batch_size" => p.batch_size = v(key, value)?,
            "ppo.minibatch" => p.minibatch = v(key, value)?,
            "ppo.sgd_iters" => p.sgd_iters = v(key, value)?,
            "ppo.epochs" => p.epochs = v(key, value)?,
            "ppo.gamma" => p.gamma = v(key, value)?,
            "ppo.clip" => p.clip = v(key, value)?,
            "ppo.vf_coef" => p.vf_coef = v(key, value)?,
            "ppo.entropy_coef" => p.entropy_coef = v(key, value)?,
            "ppo.standardize_advantages" => p.standardize_advantages = v(key, value)?,
            "ppo.adam_beta1" => p.adam_beta1 = v(key, value)?,
            "ppo.adam_beta2" => p.adam_beta2 = v(key, value)?,
            "ppo.adam_eps" => p.adam_eps = v(key, value)?,
            "ppo.hidden" => p.hidden = v(key, value)?,
            "ppo.checkpoint_every" => p.checkpoint_every = v(key, value)?,
            "ppo.record_every" => p.record_every = v(key, value)?,
            "run.seeds" => {
                *seeds = value
                    .split(',')
                    .map(|x| v(key, x.trim()))
                    .collect::<Result<_, _>>()?;
            }
            "run.out" => *out = Some(PathBuf::from(value)),
            "run.workers" => *workers = v(key, value)?,
            "eval.episodes" => *eval_episodes = v(key, value)?,
            _ => return Err(ConfigError::Value { key: key.into(), msg: "unknown key".into() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.task.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ppo.validate(self.task.steps).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("run.seeds needs at least one seed".into()));
        }
        if self.eval_episodes < 2 {
            return Err(ConfigError::Invalid("eval.episodes must be at least 2".into()));
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let (t, s, p) = (&self.task, &self.task.sim, &self.ppo);
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("task.kind", t.kind.name().into());
        kv("task.resolution", t.resolution.to_string());
        kv("task.steps", t.steps.to_string());
        kv("task.bundle_edge", t.bundle_edge.to_string());
        kv("task.voxel_size", format!("{:?}", t.voxel_size));
        kv("sim.dt", format!("{:?}", s.dt));
        kv("sim.burn_in", format!("{:?}", s.burn_in));
        kv("sim.eval", format!("{:?}", s.eval));
        kv("sim.damping_ratio", format!("{:?}", s.damping_ratio));
        kv("sim.global_damping", format!("{:?}", s.global_damping));
        kv("sim.gravity", format!("{:?}", s.gravity));
        kv("sim.ground", s.ground.to_string());
        kv("sim.ground_stiffness", s.ground_stiffness.map_or("auto".into(), |k| format!("{k:?}")));
        kv("sim.stick_speed", format!("{:?}", s.stick_speed));
        kv("sim.actuate_during_burn_in", s.actuate_during_burn_in.to_string());
        kv("sim.frequency", format!("{:?}", s.frequency));
        kv("ppo.learning_rate", format!("{:?}", p.learning_rate));
        kv("ppo.batch_size", p.batch_size.to_string());
        kv("ppo.minibatch", p.minibatch.to_string());
        kv("ppo.sgd_iters", p.sgd_iters.to_string());
        kv("ppo.epochs", p.epochs.to_string());
        kv("ppo.gamma", format!("{:?}", p.gamma));
        kv("ppo.clip", format!("{:?}", p.clip));
        kv("ppo.vf_coef", format!("{:?}", p.vf_coef));
        kv("ppo.entropy_coef", format!("{:?}", p.entropy_coef));
        kv("ppo.standardize_advantages", p.standardize_advantages.to_string());
        kv("ppo.adam_beta1", format!("{:?}", p.adam_beta1));
        kv("ppo.adam_beta2", format!("{:?}", p.adam_beta2));
        kv("ppo.adam_eps", format!("{:?}", p.adam_eps));
        kv("ppo.hidden", p.hidden.to_string());
        kv("ppo.checkpoint_every", p.checkpoint_every.to_string());
        kv("ppo.record_every", p.record_every.to_string());
        kv("run.seeds", self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", "));
        if let Some(o) = &self.out {
            kv("run.out", o.display().to_string());
        }
        kv("run.workers", self.workers.to_string());
        kv("eval.episodes", self.eval_episodes.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let text = "# desk-scale volume run\n\
                    task.kind = volume\n\
                    task.resolution = 10\n\
                    task.steps = 50   # shorter episodes\n\
                    ppo.batch_size = 1050\n\
                    ppo.sgd_iters = 12\n\
                    run.seeds = 1, 2, 3\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.task.resolution, 10);
        assert_eq!(c.task.materials, 2);
        assert_eq!(c.ppo.hidden, 128);
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn locomotion_defaults() {
        let c = ExperimentConfig::parse("task.kind = locomotion\nsim.ground_stiffness = 500\n").unwrap();
        assert_eq!(c.task.materials, 4);
        assert_eq!(c.ppo.hidden, 256);
        assert_eq!(c.task.sim.ground_stiffness, Some(500.0));
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in [
            "task.resolution = 10\n",
            "task.kind = volume\ntask.colour = red\n",
            "task.kind = volume\ntask.steps 5\n",
            "task.kind = volume\ntask.steps = five\n",
            "task.kind = volume\ntask.steps = 5\ntask.steps = 6\n",
            "task.kind = volume\ntask.steps = 50\nppo.batch_size = 1024\n",
            "task.kind = swimming\n",
        ] {
            assert!(ExperimentConfig::parse(bad).is_err(), "{bad:?}");
        }
    }
}
