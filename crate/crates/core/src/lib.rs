//! Policy-gradient design of freeform voxel soft robots.
//!
//! * [`grid`]: voxel lattice, bundle deposition, body extraction, morphometrics.
//! * [`physics`]: beam-lattice soft-body simulator with muscle actuation and
//!   Coulomb ground friction.
//! * [`env`]: the design episode (action decoding, deposition, terminal reward).
//! * [`nn`]: 3D-CNN actor-critic with exact reverse-mode gradients.
//! * [`ppo`]: clipped-surrogate policy optimisation over design episodes.
//! * [`harness`]: configuration, statistics and the evaluation pipelines.

pub mod env;
pub mod grid;
pub mod harness;
pub mod nn;
pub mod par;
pub mod physics;
pub mod ppo;
