use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::Vector3;

use super::{MaterialTable, SimConfig, SimError};
use crate::grid::Body;

/// One voxel: a point mass with the rotational inertia of a solid cube.
#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub cell: [i32; 3],
    pub material: u8,
    /// kg.
    pub mass: f64,
    /// kg·m², isotropic.
    pub inertia: f64,
    pub static_friction: f64,
    pub dynamic_friction: f64,
}

/// A beam between two face-adjacent voxels. `a` is on the negative side of
/// `axis`, `b` on the positive side.
#[derive(Clone, Debug, PartialEq)]
pub struct Beam {
    pub a: u32,
    pub b: u32,
    pub axis: u8,
    /// Axial stiffness `E·A/l`, N/m.
    pub axial: f64,
    /// Torsional stiffness `G·J/l`, N·m/rad.
    pub torsion: f64,
    /// Transverse stiffness `12·E·I/l³`, N/m.
    pub shear: f64,
    /// Force/rotation coupling `6·E·I/l²`, N/rad.
    pub coupling: f64,
    /// Bending stiffness `2·E·I/l`, N·m/rad.
    pub bending: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub damp_axial: f64,
    pub damp_shear: f64,
    pub damp_bending: f64,
    pub damp_torsion: f64,
}

impl Beam {
    /// Rest length of this beam at time `t` for an actuation frequency.
    pub fn rest_length(&self, voxel_size: f64, frequency: f64, t: f64) -> f64 {
        if self.amplitude == 0.0 {
            return voxel_size;
        }
        voxel_size * (1.0 + self.amplitude * (2.0 * PI * frequency * t + self.phase).sin())
    }
}

/// Immutable physical model of one body.
#[derive(Clone, Debug, PartialEq)]
pub struct SimModel {
    pub nodes: Vec<Node>,
    pub beams: Vec<Beam>,
    /// Voxel edge length `L`, m.
    pub voxel_size: f64,
    /// Ground penalty stiffness, N/m.
    pub ground_stiffness: f64,
    pub frequency: f64,
    pub gravity: f64,
}

/// Builds the beam lattice for `body` with voxel edge `voxel_size` (m).
///
/// Beams joining two materials use the arithmetic mean of their modulus,
/// Poisson ratio, actuation amplitude and phase.
pub fn build_model(
    body: &Body,
    materials: &MaterialTable,
    voxel_size: f64,
    config: &SimConfig,
) -> Result<SimModel, SimError> {
    if body.volume() == 0 {
        return Err(SimError::EmptyBody);
    }
    let l = voxel_size;
    let mut nodes = Vec::with_capacity(body.volume());
    let mut lookup = HashMap::with_capacity(body.volume());
    for (i, (p, m)) in body.voxels().iter().enumerate() {
        let props = materials.get(m.0).ok_or(SimError::UnknownMaterial(m.0))?;
        let mass = props.density * l * l * l;
        nodes.push(Node {
            cell: *p,
            material: m.0,
            mass,
            inertia: mass * l * l / 6.0,
            static_friction: props.static_friction,
            dynamic_friction: props.dynamic_friction,
        });
        lookup.insert(*p, i as u32);
    }

    let zeta = config.damping_ratio;
    let mut beams = Vec::new();
    let mut max_modulus = 0.0f64;
    for (i, (p, m)) in body.voxels().iter().enumerate() {
        let pa = materials.get(m.0).ok_or(SimError::UnknownMaterial(m.0))?;
        max_modulus = max_modulus.max(pa.young_modulus);
        for axis in 0..3u8 {
            let mut q = *p;
            q[axis as usize] += 1;
            let Some(&j) = lookup.get(&q) else { continue };
            let pb = materials
                .get(nodes[j as usize].material)
                .ok_or(SimError::UnknownMaterial(nodes[j as usize].material))?;
            let e = 0.5 * (pa.young_modulus + pb.young_modulus);
            let nu = 0.5 * (pa.poisson_ratio + pb.poisson_ratio);
            let g = e / (2.0 * (1.0 + nu));
            let area = l * l;
            let second_moment = l.powi(4) / 12.0;
            let polar_moment = 2.0 * second_moment;

            let axial = e * area / l;
            let torsion = g * polar_moment / l;
            let shear = 12.0 * e * second_moment / l.powi(3);
            let coupling = 6.0 * e * second_moment / (l * l);
            let bending = 2.0 * e * second_moment / l;

            let (na, nb) = (&nodes[i], &nodes[j as usize]);
            let mu = na.mass * nb.mass / (na.mass + nb.mass);
            let imu = na.inertia * nb.inertia / (na.inertia + nb.inertia);
            beams.push(Beam {
                a: i as u32,
                b: j,
                axis,
                axial,
                torsion,
                shear,
                coupling,
                bending,
                amplitude: 0.5 * (pa.actuation_amplitude + pb.actuation_amplitude),
                phase: 0.5 * (pa.actuation_phase + pb.actuation_phase),
                damp_axial: 2.0 * zeta * (mu * axial).sqrt(),
                damp_shear: 2.0 * zeta * (mu * shear).sqrt(),
                damp_bending: 2.0 * zeta * (imu * 2.0 * bending).sqrt(),
                damp_torsion: 2.0 * zeta * (imu * torsion).sqrt(),
            });
        }
    }

    Ok(SimModel {
        nodes,
        beams,
        voxel_size: l,
        ground_stiffness: config.ground_stiffness.unwrap_or(max_modulus * l),
        frequency: config.frequency,
        gravity: config.gravity,
    })
}

impl SimModel {
    /// Rest length of every beam at time `t`.
    pub fn set_actuation(&self, t: f64) -> Vec<f64> {
        self.beams.iter().map(|b| b.rest_length(self.voxel_size, self.frequency, t)).collect()
    }

    /// Initial node positions: the body's bounding box sits on `z = 0` with
    /// its lowest corner at `(offset.x, offset.y)`.
    pub fn initial_positions(&self, offset: [f64; 2]) -> Vec<Vector3<f64>> {
        let mut min = [i32::MAX; 3];
        for n in &self.nodes {
            for (m, c) in min.iter_mut().zip(n.cell) {
                *m = (*m).min(c);
            }
        }
        let l = self.voxel_size;
        self.nodes
            .iter()
            .map(|n| {
                let c = [0, 1, 2].map(|a| (n.cell[a] - min[a]) as f64 + 0.5);
                Vector3::new(offset[0] + c[0] * l, offset[1] + c[1] * l, c[2] * l)
            })
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes.iter().map(|n| n.mass).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{extract_body, Bundle, MaterialId, VoxelGrid};

    fn body_of(cells: &[([i32; 3], u8)]) -> Body {
        let mut g = VoxelGrid::new(8, 4);
        for (p, m) in cells {
            g.set(*p, MaterialId(*m)).unwrap();
        }
        extract_body(&g).unwrap()
    }

    #[test]
    fn two_voxel_axial_stiffness() {
        let b = body_of(&[([0, 0, 0], 1), ([1, 0, 0], 1)]);
        let m = build_model(&b, &MaterialTable::standard(4), 0.01, &SimConfig::default()).unwrap();
        assert_eq!(m.beams.len(), 1);
        assert!((m.beams[0].axial - 1000.0).abs() < 1e-9);
        assert!((m.nodes[0].mass - 1.5e-3).abs() < 1e-15);
        assert_eq!(m.beams[0].axis, 0);
    }

    #[test]
    fn cube_lattice_counts() {
        let mut g = VoxelGrid::new(8, 4);
        g.deposit(&Bundle::new([2, 2, 2], MaterialId(1)));
        let m = build_model(&extract_body(&g).unwrap(), &MaterialTable::standard(4), 0.01, &SimConfig::default())
            .unwrap();
        assert_eq!(m.nodes.len(), 8);
        assert_eq!(m.beams.len(), 12);
        assert!(m.beams.iter().all(|b| b.axial > 0.0 && b.shear > 0.0 && b.bending > 0.0 && b.torsion > 0.0));
    }

    #[test]
    fn actuation_rest_lengths() {
        let l = 0.01;
        let cfg = SimConfig::default();
        let t = MaterialTable::standard(4);
        let muscle = build_model(&body_of(&[([0, 0, 0], 2), ([1, 0, 0], 2)]), &t, l, &cfg).unwrap();
        assert_eq!(muscle.set_actuation(0.0)[0], l);
        assert!((muscle.set_actuation(1.0 / 16.0)[0] - 1.10 * l).abs() < 1e-15);

        let mixed = build_model(&body_of(&[([0, 0, 0], 2), ([1, 0, 0], 3)]), &t, l, &cfg).unwrap();
        assert!((mixed.set_actuation(1.0 / 16.0)[0] - l).abs() < 1e-15);

        let passive = build_model(&body_of(&[([0, 0, 0], 1), ([0, 0, 1], 1)]), &t, l, &cfg).unwrap();
        for k in 0..50 {
            assert_eq!(passive.set_actuation(k as f64 * 0.013)[0], l);
        }
    }

    #[test]
    fn unknown_material_is_rejected() {
        let b = body_of(&[([0, 0, 0], 3)]);
        let err = build_model(&b, &MaterialTable::standard(2), 0.01, &SimConfig::default());
        assert!(matches!(err, Err(SimError::UnknownMaterial(3))));
    }
}
