use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use super::{SimConfig, SimError, SimModel};

const DIVERGENCE_LIMIT: f64 = 1e3;

/// Time-evolving node states of one body.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub position: Vec<Vector3<f64>>,
    pub velocity: Vec<Vector3<f64>>,
    pub orientation: Vec<UnitQuaternion<f64>>,
    pub angular_velocity: Vec<Vector3<f64>>,
    /// s.
    pub time: f64,
}

impl SimState {
    /// Body at rest, sitting on the ground with its lowest corner at `offset`.
    pub fn at_rest(model: &SimModel, offset: [f64; 2]) -> Self {
        let n = model.nodes.len();
        Self {
            position: model.initial_positions(offset),
            velocity: vec![Vector3::zeros(); n],
            orientation: vec![UnitQuaternion::identity(); n],
            angular_velocity: vec![Vector3::zeros(); n],
            time: 0.0,
        }
    }

    pub fn kinetic_energy(&self, model: &SimModel) -> f64 {
        model
            .nodes
            .iter()
            .zip(&self.velocity)
            .zip(&self.angular_velocity)
            .map(|((n, v), w)| 0.5 * n.mass * v.norm_squared() + 0.5 * n.inertia * w.norm_squared())
            .sum()
    }

    pub fn linear_momentum(&self, model: &SimModel) -> Vector3<f64> {
        model.nodes.iter().zip(&self.velocity).map(|(n, v)| v * n.mass).sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.velocity.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Reusable stepping context for one model.
pub struct Stepper<'a> {
    model: &'a SimModel,
    config: &'a SimConfig,
    force: Vec<Vector3<f64>>,
    moment: Vec<Vector3<f64>>,
    rotation: Vec<Matrix3<f64>>,
    /// Per-beam `(cos φ, sin φ)` of the actuation phase.
    phase: Vec<(f64, f64)>,
    pub actuate: bool,
}

#[inline(always)]
fn permute(v: Vector3<f64>, axis: u8) -> Vector3<f64> {
    match axis {
        0 => v,
        1 => Vector3::new(v.y, v.z, v.x),
        _ => Vector3::new(v.z, v.x, v.y),
    }
}

#[inline(always)]
fn unpermute(v: Vector3<f64>, axis: u8) -> Vector3<f64> {
    match axis {
        0 => v,
        1 => Vector3::new(v.z, v.x, v.y),
        _ => Vector3::new(v.y, v.z, v.x),
    }
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a SimModel, config: &'a SimConfig) -> Self {
        let n = model.nodes.len();
        Self {
            model,
            config,
            force: vec![Vector3::zeros(); n],
            moment: vec![Vector3::zeros(); n],
            rotation: vec![Matrix3::identity(); n],
            phase: model.beams.iter().map(|b| (b.phase.cos(), b.phase.sin())).collect(),
            actuate: true,
        }
    }

    /// Advances `state` by one timestep with semi-implicit Euler.
    pub fn step(&mut self, state: &mut SimState) -> Result<(), SimError> {
        let model = self.model;
        let cfg = self.config;
        let dt = cfg.dt;
        let l = model.voxel_size;

        for (r, q) in self.rotation.iter_mut().zip(&state.orientation) {
            *r = q.to_rotation_matrix().into_inner();
        }
        self.force.iter_mut().for_each(|f| *f = Vector3::zeros());
        self.moment.iter_mut().for_each(|m| *m = Vector3::zeros());

        let (wave_sin, wave_cos) = if self.actuate {
            (2.0 * PI * model.frequency * state.time).sin_cos()
        } else {
            (0.0, 1.0)
        };

        for (beam, &(phase_cos, phase_sin)) in model.beams.iter().zip(&self.phase) {
            let (a, b) = (beam.a as usize, beam.b as usize);
            let axis = beam.axis;
            let rot = &self.rotation[a];
            let rot_t = rot.transpose();

            let d = permute(rot_t * (state.position[b] - state.position[a]), axis);
            let rel = state.orientation[a].inverse() * state.orientation[b];
            let sign = if rel.w < 0.0 { -2.0 } else { 2.0 };
            let theta = permute(rel.imag() * sign, axis);
            let dv = permute(rot_t * (state.velocity[b] - state.velocity[a]), axis);
            let w1 = permute(rot_t * state.angular_velocity[a], axis);
            let w2 = permute(rot_t * state.angular_velocity[b], axis);

            let rest = if self.actuate && beam.amplitude != 0.0 {
                l * (1.0 + beam.amplitude * (wave_sin * phase_cos + wave_cos * phase_sin))
            } else {
                l
            };

            let (kb1, kb2, kb3) = (beam.shear, beam.coupling, beam.bending);
            let mut f1 = Vector3::new(
                beam.axial * (d.x - rest),
                kb1 * d.y - kb2 * theta.z,
                kb1 * d.z + kb2 * theta.y,
            );
            let mut m1 = Vector3::new(
                beam.torsion * theta.x,
                -kb2 * d.z - kb3 * theta.y,
                kb2 * d.y - kb3 * theta.z,
            );
            let mut m2 = Vector3::new(
                -beam.torsion * theta.x,
                -kb2 * d.z - 2.0 * kb3 * theta.y,
                kb2 * d.y - 2.0 * kb3 * theta.z,
            );

            // Damp deformation rates only; rigid motion of the pair is exempt.
            let fd = Vector3::new(
                beam.damp_axial * dv.x,
                beam.damp_shear * (dv.y - 0.5 * d.x * (w1.z + w2.z)),
                beam.damp_shear * (dv.z + 0.5 * d.x * (w1.y + w2.y)),
            );
            let couple = 0.5 * d.cross(&fd);
            let dw = w2 - w1;
            let md = Vector3::new(
                beam.damp_torsion * dw.x,
                beam.damp_bending * dw.y,
                beam.damp_bending * dw.z,
            );
            f1 += fd;
            m1 += md + couple;
            m2 += couple - md;

            let f1w = rot * unpermute(f1, axis);
            self.force[a] += f1w;
            self.force[b] -= f1w;
            self.moment[a] += rot * unpermute(m1, axis);
            self.moment[b] += rot * unpermute(m2, axis);
        }

        let ground_k = model.ground_stiffness;
        let contact_z = 0.5 * l;
        let decay = cfg.global_damping;
        for (i, node) in model.nodes.iter().enumerate() {
            let m = node.mass;
            let mut f = self.force[i];
            let v = state.velocity[i];
            f.z -= m * model.gravity;
            f -= v * (m * decay);

            let mut stick = false;
            let mut sliding = None;
            if cfg.ground {
                let penetration = contact_z - state.position[i].z;
                if penetration > 0.0 {
                    let damping = 2.0 * (m * ground_k).sqrt();
                    let normal = (ground_k * penetration - damping * v.z).max(0.0);
                    f.z += normal;
                    let tangent_v = (v.x * v.x + v.y * v.y).sqrt();
                    let tangent_f = (f.x * f.x + f.y * f.y).sqrt();
                    if tangent_v < cfg.stick_speed {
                        if tangent_f <= node.static_friction * normal {
                            stick = true;
                        } else if tangent_f > 0.0 {
                            let s = node.dynamic_friction * normal / tangent_f;
                            f.x -= f.x * s;
                            f.y -= f.y * s;
                        }
                    } else {
                        let s = node.dynamic_friction * normal / tangent_v;
                        f.x -= v.x * s;
                        f.y -= v.y * s;
                        sliding = Some((v.x, v.y));
                    }
                }
            }

            let mut v_new = v + f * (dt / m);
            if stick {
                v_new.x = 0.0;
                v_new.y = 0.0;
            } else if let Some((vx, vy)) = sliding {
                // Kinetic friction brings a contact to rest rather than reversing it.
                if v_new.x * vx + v_new.y * vy < 0.0 {
                    v_new.x = 0.0;
                    v_new.y = 0.0;
                }
            }
            state.velocity[i] = v_new;
            state.position[i] += v_new * dt;

            let w = state.angular_velocity[i]
                + (self.moment[i] - state.angular_velocity[i] * (node.inertia * decay)) * (dt / node.inertia);
            state.angular_velocity[i] = w;
            let q = state.orientation[i].into_inner();
            let spin = Quaternion::new(0.0, w.x, w.y, w.z) * q;
            state.orientation[i] = UnitQuaternion::new_normalize(q + spin * (0.5 * dt));

            let p = state.position[i];
            if !(p.x.abs() <= DIVERGENCE_LIMIT && p.y.abs() <= DIVERGENCE_LIMIT && p.z.abs() <= DIVERGENCE_LIMIT)
                || !(v_new.iter().all(|c| c.is_finite()) && w.iter().all(|c| c.is_finite()))
            {
                return Err(SimError::Divergence { time: state.time, node: i });
            }
        }
        state.time += dt;
        Ok(())
    }
}

/// One timestep, returning the new state.
pub fn step(model: &SimModel, state: &SimState, config: &SimConfig) -> Result<SimState, SimError> {
    let mut next = state.clone();
    Stepper::new(model, config).step(&mut next)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{extract_body, MaterialId, VoxelGrid};
    use crate::physics::{build_model, MaterialTable};

    fn model(cells: &[([i32; 3], u8)], cfg: &SimConfig) -> SimModel {
        let mut g = VoxelGrid::new(8, 4);
        for (p, m) in cells {
            g.set(*p, MaterialId(*m)).unwrap();
        }
        build_model(&extract_body(&g).unwrap(), &MaterialTable::standard(4), 0.01, cfg).unwrap()
    }

    #[test]
    fn free_fall_matches_kinematics() {
        let cfg = SimConfig { ground: false, ..SimConfig::default() };
        let m = model(&[([0, 0, 0], 1)], &cfg);
        let mut s = SimState::at_rest(&m, [0.0, 0.0]);
        let z0 = s.position[0].z;
        let n = (0.1 / cfg.dt).round() as usize;
        let mut stepper = Stepper::new(&m, &cfg);
        for _ in 0..n {
            stepper.step(&mut s).unwrap();
        }
        let t = s.time;
        let expected = 0.5 * 9.81 * t * t;
        let drop = z0 - s.position[0].z;
        assert!((drop - expected).abs() < 0.01 * expected, "drop {drop} vs {expected}");
    }

    #[test]
    fn rest_state_is_static_without_gravity() {
        let cfg = SimConfig::free_space();
        let m = model(&[([0, 0, 0], 1), ([1, 0, 0], 1), ([1, 1, 0], 1), ([1, 1, 1], 1)], &cfg);
        let s0 = SimState::at_rest(&m, [0.0, 0.0]);
        let s1 = step(&m, &s0, &cfg).unwrap();
        // Cell-center coordinates are not exact in binary, so allow round-off.
        for (a, b) in s0.position.iter().zip(&s1.position) {
            assert!((a - b).norm() < 1e-15);
        }
        assert!(s1.max_speed() < 1e-12);
    }

    #[test]
    fn stretched_pair_recoils_symmetrically() {
        let cfg = SimConfig::free_space();
        let m = model(&[([0, 0, 0], 1), ([0, 1, 0], 1)], &cfg);
        let mut s = SimState::at_rest(&m, [0.0, 0.0]);
        s.position[1].y += 0.001;
        let s1 = step(&m, &s, &cfg).unwrap();
        assert!(s1.velocity[0].y > 0.0 && s1.velocity[1].y < 0.0);
        assert!((s1.velocity[0].y + s1.velocity[1].y).abs() < 1e-15);
        assert!(s1.velocity[0].x.abs() < 1e-15 && s1.velocity[0].z.abs() < 1e-15);
    }

    #[test]
    fn rigid_rotation_has_no_elastic_response() {
        let cfg = SimConfig::free_space();
        let m = model(&[([0, 0, 0], 1), ([1, 0, 0], 1), ([1, 0, 1], 1)], &cfg);
        let mut s = SimState::at_rest(&m, [0.0, 0.0]);
        let rot = UnitQuaternion::from_euler_angles(0.3, -0.2, 0.7);
        let c = s.position[0];
        for i in 0..s.position.len() {
            s.position[i] = c + rot * (s.position[i] - c);
            s.orientation[i] = rot;
        }
        let s1 = step(&m, &s, &cfg).unwrap();
        assert!(s1.max_speed() < 1e-12, "{}", s1.max_speed());
        assert!(s1.angular_velocity.iter().all(|w| w.norm() < 1e-9));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = SimConfig::free_space();
        let m = model(&[([0, 0, 0], 1)], &cfg);
        let mut s = SimState::at_rest(&m, [0.0, 0.0]);
        s.velocity[0].x = f64::NAN;
        assert!(matches!(step(&m, &s, &cfg), Err(SimError::Divergence { .. })));
        s.velocity[0].x = 0.0;
        s.position[0].x = 2e3;
        assert!(matches!(step(&m, &s, &cfg), Err(SimError::Divergence { .. })));
    }
}
