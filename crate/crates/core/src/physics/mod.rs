//! Fixed-timestep soft-body dynamics for voxel bodies.
//!
//! Each voxel is a point mass with rotational degrees of freedom. Face-adjacent
//! voxels are joined by Euler-Bernoulli beams that resist stretching, shear,
//! bending and torsion. Muscle materials oscillate the rest length of their
//! beams. Contact with the `z = 0` plane uses a penalty spring and Coulomb
//! friction with a stick/slip switch.

mod episode;
mod model;
mod step;

pub use episode::{displacement_reward, run_episode, EpisodeOutcome, EpisodeStatus, Trajectory};
pub use model::{build_model, Beam, Node, SimModel};
pub use step::{step, SimState, Stepper};

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation diverged at t = {time:.6} s (node {node})")]
    Divergence { time: f64, node: usize },
    #[error("cannot build a model from an empty body")]
    EmptyBody,
    #[error("material {0} has no entry in the material table")]
    UnknownMaterial(u8),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory file: {0}")]
    Format(String),
}

/// Physical properties of one material.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialProps {
    /// Young's modulus, Pa.
    pub young_modulus: f64,
    /// kg/m³.
    pub density: f64,
    pub poisson_ratio: f64,
    pub static_friction: f64,
    pub dynamic_friction: f64,
    /// Relative rest-length oscillation amplitude (0.1 = ±10 %).
    pub actuation_amplitude: f64,
    /// Radians.
    pub actuation_phase: f64,
}

impl MaterialProps {
    pub const SILICONE: MaterialProps = MaterialProps {
        young_modulus: 1e5,
        density: 1500.0,
        poisson_ratio: 0.35,
        static_friction: 1.0,
        dynamic_friction: 0.5,
        actuation_amplitude: 0.0,
        actuation_phase: 0.0,
    };

    pub fn muscle(phase: f64) -> Self {
        MaterialProps { actuation_amplitude: 0.1, actuation_phase: phase, ..Self::SILICONE }
    }
}

/// Properties indexed by material id; entry 0 (empty space) is unused.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialTable {
    entries: Vec<MaterialProps>,
}

impl MaterialTable {
    /// Passive tissue at id 1; for `k = 4`, anti-phase muscles at ids 2 and 3.
    pub fn standard(k: u8) -> Self {
        let mut entries = vec![MaterialProps::SILICONE; k as usize];
        if k > 2 {
            entries[2] = MaterialProps::muscle(0.0);
        }
        if k > 3 {
            entries[3] = MaterialProps::muscle(PI);
        }
        Self { entries }
    }

    pub fn from_entries(entries: Vec<MaterialProps>) -> Self {
        Self { entries }
    }

    pub fn get(&self, id: u8) -> Option<&MaterialProps> {
        if id == 0 {
            None
        } else {
            self.entries.get(id as usize)
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.len() <= 1
    }
}

/// Integration and environment parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Timestep, s.
    pub dt: f64,
    /// Settling time before the reference snapshot, s.
    pub burn_in: f64,
    /// Evaluation time after the reference snapshot, s.
    pub eval: f64,
    /// Per-beam damping ratio.
    pub damping_ratio: f64,
    /// Global velocity damping rate, 1/s.
    pub global_damping: f64,
    /// m/s², applied along −z.
    pub gravity: f64,
    pub ground: bool,
    /// Penalty stiffness of the ground plane in N/m; `None` uses `E·L` of
    /// the stiffest material.
    pub ground_stiffness: Option<f64>,
    /// Tangential speed below which a contact may stick, m/s.
    pub stick_speed: f64,
    /// Whether muscles run during burn-in.
    pub actuate_during_burn_in: bool,
    /// Muscle frequency, Hz.
    pub frequency: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.000118,
            burn_in: 5.0,
            eval: 5.0,
            damping_ratio: 0.5,
            global_damping: 0.01,
            gravity: 9.81,
            ground: true,
            ground_stiffness: None,
            stick_speed: 1e-5,
            actuate_during_burn_in: true,
            frequency: 4.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.burn_in >= 0.0 && self.eval >= 0.0) {
            return Err(SimError::Config("burn_in and eval must be non-negative".into()));
        }
        if self.damping_ratio < 0.0 || self.global_damping < 0.0 {
            return Err(SimError::Config("damping must be non-negative".into()));
        }
        Ok(())
    }

    pub fn burn_in_steps(&self) -> usize {
        (self.burn_in / self.dt).round() as usize
    }

    pub fn eval_steps(&self) -> usize {
        (self.eval / self.dt).round() as usize
    }

    /// Free space: no gravity, no ground plane.
    pub fn free_space() -> Self {
        Self { gravity: 0.0, ground: false, ..Self::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_table_defaults() {
        let t = MaterialTable::standard(4);
        assert!(t.get(0).is_none());
        let p = t.get(1).unwrap();
        assert_eq!(p.young_modulus, 1e5);
        assert_eq!(p.density, 1500.0);
        assert_eq!(p.poisson_ratio, 0.35);
        assert_eq!((p.static_friction, p.dynamic_friction), (1.0, 0.5));
        assert_eq!(p.actuation_amplitude, 0.0);
        assert_eq!(t.get(2).unwrap().actuation_amplitude, 0.1);
        assert_eq!(t.get(3).unwrap().actuation_phase, PI);
        assert!(t.get(4).is_none());
    }

    #[test]
    fn default_step_counts() {
        let c = SimConfig::default();
        assert_eq!(c.eval_steps(), 42373);
        assert!(c.validate().is_ok());
        assert!(SimConfig { dt: 0.0, ..c }.validate().is_err());
    }
}
