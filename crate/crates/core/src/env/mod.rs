//! The design episode.
//!
//! An episode starts from an empty grid. Each of `T` steps decodes a raw
//! action vector into a bundle and deposits it. Only the last step is
//! rewarded: with the body volume for the volume task, or the net
//! displacement of the simulated body for the locomotion task.

mod record;

pub use record::{replay, EpisodeRecord, RecordError};

use num_traits::Float;
use thiserror::Error;

use crate::grid::{compute_metrics, extract_body, Body, BodyMetrics, Bundle, MaterialId, VoxelGrid};
use crate::physics::{build_model, run_episode, MaterialTable, SimConfig, SimError, Trajectory};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid task: {0}")]
    Task(String),
    #[error("episode already finished ({steps} steps)")]
    Finished { steps: usize },
    #[error("action has {got} components, expected {expected}")]
    ActionShape { got: usize, expected: usize },
    #[error("action component {0} is not finite")]
    NonFinite(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Volume,
    Locomotion,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Volume => "volume",
            TaskKind::Locomotion => "locomotion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "volume" => Some(TaskKind::Volume),
            "locomotion" => Some(TaskKind::Locomotion),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Grid resolution ρ.
    pub resolution: usize,
    /// Material channels k, including null.
    pub materials: u8,
    /// Design steps per episode, T.
    pub steps: usize,
    pub bundle_edge: u8,
    /// Voxel edge length, m.
    pub voxel_size: f64,
    pub sim: SimConfig,
}

impl TaskSpec {
    pub fn volume(resolution: usize, steps: usize) -> Self {
        Self {
            kind: TaskKind::Volume,
            resolution,
            materials: 2,
            steps,
            bundle_edge: 2,
            voxel_size: 0.01,
            sim: SimConfig::default(),
        }
    }

    pub fn locomotion(resolution: usize, steps: usize, sim: SimConfig) -> Self {
        Self {
            kind: TaskKind::Locomotion,
            resolution,
            materials: 4,
            steps,
            bundle_edge: 2,
            voxel_size: 0.01,
            sim,
        }
    }

    /// Dimension of a raw action: three position components plus one per material.
    pub fn action_dim(&self) -> usize {
        3 + self.materials as usize
    }

    /// Units the critic predicts returns in: the largest body a volume
    /// episode can build, or one voxel length for locomotion.
    pub fn value_scale(&self) -> f64 {
        match self.kind {
            TaskKind::Volume => (self.steps * (self.bundle_edge as usize).pow(3)) as f64,
            TaskKind::Locomotion => 1.0,
        }
    }

    pub fn material_table(&self) -> MaterialTable {
        MaterialTable::standard(self.materials)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let expected = match self.kind {
            TaskKind::Volume => 2,
            TaskKind::Locomotion => 4,
        };
        if self.materials != expected {
            return Err(EnvError::Task(format!(
                "{} task needs k = {expected}, got {}",
                self.kind.name(),
                self.materials
            )));
        }
        if self.resolution == 0 || self.steps == 0 || self.bundle_edge == 0 {
            return Err(EnvError::Task("resolution, steps and bundle edge must be positive".into()));
        }
        if self.kind == TaskKind::Locomotion {
            self.sim.validate()?;
        }
        Ok(())
    }
}

/// A raw action as sampled from the policy; unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct RawAction(pub Vec<f32>);

impl RawAction {
    pub fn validate(&self, dim: usize) -> Result<(), EnvError> {
        if self.0.len() != dim {
            return Err(EnvError::ActionShape { got: self.0.len(), expected: dim });
        }
        if let Some(i) = self.0.iter().position(|a| !a.is_finite()) {
            return Err(EnvError::NonFinite(i));
        }
        Ok(())
    }
}

/// Maps an unbounded action component to `[0, 1]`: `1/2 + clip(a, −2, 2)/4`.
#[inline]
pub fn clip_map<F: Float>(a: F) -> F {
    let two = F::one() + F::one();
    let half = F::one() / two;
    half + a.max(-two).min(two) / (two * two)
}

/// Decodes a raw action into a bundle.
///
/// The continuous center `clip_map(a_i)·ρ` is rounded to the nearest lattice
/// point and the bundle is placed around it, so its covered range may extend
/// one voxel past either face of the grid. The material is the argmax of the
/// mapped material components, with ties going to the lowest id.
pub fn decode_action(a: &RawAction, resolution: usize, materials: u8, bundle_edge: u8) -> Bundle {
    debug_assert_eq!(a.0.len(), 3 + materials as usize);
    let half = (bundle_edge / 2) as i32;
    let min_corner = [0, 1, 2].map(|i| {
        let center = clip_map(a.0[i] as f64) * resolution as f64;
        center.round() as i32 - half
    });
    let mut best = (0u8, f64::NEG_INFINITY);
    for m in 0..materials {
        let v = clip_map(a.0[3 + m as usize] as f64);
        if v > best.1 {
            best = (m, v);
        }
    }
    Bundle { min_corner, edge: bundle_edge, material: MaterialId(best.0) }
}

/// The body and its score after the final design step.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub reward: f64,
    pub body: Option<Body>,
    pub metrics: Option<BodyMetrics>,
    pub diverged: bool,
    pub trajectory: Option<Trajectory>,
}

/// Scores a finished design. Empty grids score zero.
pub fn evaluate_design(grid: &VoxelGrid, task: &TaskSpec, frame_every: Option<usize>) -> Evaluation {
    let Some(body) = extract_body(grid) else {
        return Evaluation { reward: 0.0, body: None, metrics: None, diverged: false, trajectory: None };
    };
    let metrics = compute_metrics(grid, &body).ok();
    match task.kind {
        TaskKind::Volume => Evaluation {
            reward: body.volume() as f64,
            body: Some(body),
            metrics,
            diverged: false,
            trajectory: None,
        },
        TaskKind::Locomotion => {
            let model = build_model(&body, &task.material_table(), task.voxel_size, &task.sim)
                .expect("bodies extracted from a validated task use known materials");
            let outcome = run_episode(&model, &task.sim, frame_every);
            Evaluation {
                reward: outcome.reward,
                diverged: outcome.diverged(),
                trajectory: outcome.trajectory,
                body: Some(body),
                metrics,
            }
        }
    }
}

/// Mutable state of one design episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    pub grid: VoxelGrid,
    pub t: usize,
    pub steps: usize,
    /// Union of in-grid cells covered by non-null deposits.
    deposited: Vec<bool>,
}

impl EpisodeState {
    pub fn new(task: &TaskSpec) -> Self {
        let grid = VoxelGrid::new(task.resolution, task.materials);
        let n = grid.len();
        Self { grid, t: 0, steps: task.steps, deposited: vec![false; n] }
    }

    pub fn done(&self) -> bool {
        self.t >= self.steps
    }

    pub fn deposited_count(&self) -> usize {
        self.deposited.iter().filter(|&&d| d).count()
    }

    /// Final body size over all cells ever deposited; zero if nothing was.
    pub fn action_efficiency(&self) -> f64 {
        let union = self.deposited_count();
        if union == 0 {
            return 0.0;
        }
        extract_body(&self.grid).map_or(0, |b| b.volume()) as f64 / union as f64
    }

    /// Decodes and deposits one action without scoring anything.
    pub fn design_step(&mut self, action: &RawAction, task: &TaskSpec) -> Result<Bundle, EnvError> {
        if self.done() {
            return Err(EnvError::Finished { steps: self.steps });
        }
        action.validate(task.action_dim())?;
        let bundle = decode_action(action, task.resolution, task.materials, task.bundle_edge);
        self.apply(&bundle);
        self.t += 1;
        Ok(bundle)
    }

    fn apply(&mut self, bundle: &Bundle) {
        self.grid.deposit(bundle);
        if !bundle.material.is_null() {
            for p in bundle.cells() {
                if self.grid.contains(p) {
                    let i = self.grid.index(p);
                    self.deposited[i] = true;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    /// Present on the final step.
    pub evaluation: Option<Evaluation>,
}

/// Applies one design action. The reward is zero except on the final step.
pub fn env_step(state: &mut EpisodeState, action: &RawAction, task: &TaskSpec) -> Result<StepOutcome, EnvError> {
    state.design_step(action, task)?;
    if !state.done() {
        return Ok(StepOutcome { reward: 0.0, done: false, evaluation: None });
    }
    let evaluation = evaluate_design(&state.grid, task, None);
    Ok(StepOutcome { reward: evaluation.reward, done: true, evaluation: Some(evaluation) })
}

/// One-hot encoding of a grid, laid out as `[cell][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTensor<F> {
    pub resolution: usize,
    pub channels: usize,
    pub data: Vec<F>,
}

impl<F: Float> StateTensor<F> {
    pub fn at(&self, cell: usize, channel: usize) -> F {
        self.data[cell * self.channels + channel]
    }
}

/// Channel `m` is one exactly where the grid holds material `m`; channel 0
/// marks empty cells.
pub fn state_tensor<F: Float>(grid: &VoxelGrid) -> StateTensor<F> {
    let k = grid.materials() as usize;
    let mut data = vec![F::zero(); grid.len() * k];
    for (i, m) in grid.cells().iter().enumerate() {
        data[i * k + m.0 as usize] = F::one();
    }
    StateTensor { resolution: grid.resolution(), channels: k, data }
}
