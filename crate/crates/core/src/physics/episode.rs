use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{SimConfig, SimError, SimModel, SimState, Stepper};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpisodeStatus {
    Completed,
    /// The body blew up; the episode scores zero.
    Diverged { time: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    /// Net displacement in voxel lengths.
    pub reward: f64,
    pub status: EpisodeStatus,
    pub trajectory: Option<Trajectory>,
}

impl EpisodeOutcome {
    pub fn diverged(&self) -> bool {
        matches!(self.status, EpisodeStatus::Diverged { .. })
    }
}

/// Largest horizontal distance travelled by any node, in voxel lengths.
pub fn displacement_reward(reference: &[Vector3<f64>], last: &[Vector3<f64>], voxel_size: f64) -> f64 {
    reference
        .iter()
        .zip(last)
        .map(|(a, b)| (b.x - a.x).hypot(b.y - a.y))
        .fold(0.0, f64::max)
        / voxel_size
}

/// Settles the body for the burn-in period, snapshots every node, runs the
/// evaluation period and scores the net displacement.
///
/// `frame_every` records node positions every that many steps.
pub fn run_episode(model: &SimModel, config: &SimConfig, frame_every: Option<usize>) -> EpisodeOutcome {
    run_episode_from(model, config, SimState::at_rest(model, [0.0, 0.0]), frame_every)
}

pub(crate) fn run_episode_from(
    model: &SimModel,
    config: &SimConfig,
    mut state: SimState,
    frame_every: Option<usize>,
) -> EpisodeOutcome {
    let mut trajectory = frame_every.map(|every| Trajectory {
        node_count: model.nodes.len(),
        frame_dt: (every.max(1) as f64 * config.dt) as f32,
        frames: Vec::new(),
    });
    let every = frame_every.unwrap_or(usize::MAX).max(1);
    let mut stepper = Stepper::new(model, config);
    let mut steps = 0usize;

    let mut run = |state: &mut SimState, n: usize, stepper: &mut Stepper, trajectory: &mut Option<Trajectory>| {
        for _ in 0..n {
            if let Some(t) = trajectory.as_mut() {
                if steps.is_multiple_of(every) {
                    t.push(&state.position);
                }
            }
            stepper.step(state)?;
            steps += 1;
        }
        Ok::<(), SimError>(())
    };

    stepper.actuate = config.actuate_during_burn_in;
    let result = run(&mut state, config.burn_in_steps(), &mut stepper, &mut trajectory).and_then(|_| {
        let reference = state.position.clone();
        stepper.actuate = true;
        run(&mut state, config.eval_steps(), &mut stepper, &mut trajectory)?;
        Ok(reference)
    });

    match result {
        Ok(reference) => {
            if let Some(t) = trajectory.as_mut() {
                t.push(&state.position);
            }
            EpisodeOutcome {
                reward: displacement_reward(&reference, &state.position, model.voxel_size),
                status: EpisodeStatus::Completed,
                trajectory,
            }
        }
        Err(SimError::Divergence { time, .. }) => {
            EpisodeOutcome { reward: 0.0, status: EpisodeStatus::Diverged { time }, trajectory }
        }
        Err(e) => unreachable!("stepping only reports divergence: {e}"),
    }
}

/// Recorded node positions, in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub node_count: usize,
    /// Seconds between frames.
    pub frame_dt: f32,
    pub frames: Vec<Vec<[f32; 3]>>,
}

impl Trajectory {
    fn push(&mut self, positions: &[Vector3<f64>]) {
        self.frames.push(positions.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect());
    }

    /// `VXT1` encoding: a text header line followed by little-endian `f32`
    /// positions, frame by frame, node by node.
    pub fn to_vxt(&self) -> Vec<u8> {
        let mut out = format!("VXT1 {} {} {}\n", self.node_count, self.frames.len(), self.frame_dt).into_bytes();
        out.reserve(self.frames.len() * self.node_count * 12);
        for frame in &self.frames {
            for p in frame {
                for c in p {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_vxt(bytes: &[u8]) -> Result<Self, SimError> {
        let eol = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| SimError::Format("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..eol]).map_err(|_| SimError::Format("header not utf-8".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "VXT1" {
            return Err(SimError::Format(format!("bad header {header:?}")));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| SimError::Format(format!("bad count {s:?}")));
        let node_count = parse(fields[1])?;
        let frame_count = parse(fields[2])?;
        let frame_dt: f32 = fields[3].parse().map_err(|_| SimError::Format("bad frame_dt".into()))?;
        let payload = &bytes[eol + 1..];
        if payload.len() != node_count * frame_count * 12 {
            return Err(SimError::Format(format!(
                "expected {} payload bytes, found {}",
                node_count * frame_count * 12,
                payload.len()
            )));
        }
        let mut floats = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let frames = (0..frame_count)
            .map(|_| {
                (0..node_count)
                    .map(|_| [0; 3].map(|_| floats.next().expect("length checked")))
                    .collect()
            })
            .collect();
        Ok(Trajectory { node_count, frame_dt, frames })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        std::fs::File::create(path)?.write_all(&self.to_vxt())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_vxt(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigid_translation_scores_distance() {
        let l = 0.01;
        let reference: Vec<_> = (0..5).map(|i| Vector3::new(i as f64 * l, 0.3 * l, 0.5 * l)).collect();
        let moved: Vec<_> = reference.iter().map(|p| p + Vector3::new(3.0 * l, 0.0, 0.0)).collect();
        assert!((displacement_reward(&reference, &moved, l) - 3.0).abs() < 1e-12);
        let lifted: Vec<_> = reference.iter().map(|p| p + Vector3::new(0.0, 0.0, 7.0 * l)).collect();
        assert_eq!(displacement_reward(&reference, &lifted, l), 0.0);
    }

    #[test]
    fn vxt_rejects_truncated_payload() {
        let t = Trajectory { node_count: 2, frame_dt: 0.01, frames: vec![vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]] };
        let bytes = t.to_vxt();
        assert_eq!(Trajectory::from_vxt(&bytes).unwrap(), t);
        assert!(Trajectory::from_vxt(&bytes[..bytes.len() - 1]).is_err());
        assert!(Trajectory::from_vxt(b"VXT2 1 1 0.1\n").is_err());
    }
}
