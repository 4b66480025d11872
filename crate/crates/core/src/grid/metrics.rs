use std::collections::{HashSet, VecDeque};
use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::{Body, GridError, MaterialId, VoxelGrid, FACE_OFFSETS};

/// Morphometrics of a body within the grid it was extracted from.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BodyMetrics {
    pub volume: usize,
    /// Fraction of body voxels with fewer than six face neighbours in the body.
    pub surface_ratio: f64,
    /// Fraction of body voxels made of passive material (id 1).
    pub passive_ratio: f64,
    /// Body volume over all non-null voxels in the grid.
    pub lcc_ratio: f64,
    /// Same-material 6-connected regions inside the body.
    pub substructures: usize,
    /// Mean mirror agreement across the three bounding-box center planes.
    pub symmetry: f64,
    /// Deflated over raw byte length of the bounding-box material array.
    pub gzip_score: f64,
}

pub fn compute_metrics(grid: &VoxelGrid, body: &Body) -> Result<BodyMetrics, GridError> {
    let volume = body.volume();
    if volume == 0 {
        return Err(GridError::EmptyBody);
    }
    let members: HashSet<[i32; 3]> = body.voxels().iter().map(|(p, _)| *p).collect();

    let surface = body
        .voxels()
        .iter()
        .filter(|(p, _)| {
            FACE_OFFSETS
                .iter()
                .any(|d| !members.contains(&[p[0] + d[0], p[1] + d[1], p[2] + d[2]]))
        })
        .count();
    let passive = body.voxels().iter().filter(|(_, m)| *m == MaterialId::PASSIVE).count();
    let filled = grid.filled_count().max(volume);

    Ok(BodyMetrics {
        volume,
        surface_ratio: surface as f64 / volume as f64,
        passive_ratio: passive as f64 / volume as f64,
        lcc_ratio: volume as f64 / filled as f64,
        substructures: substructures(body),
        symmetry: symmetry(body),
        gzip_score: gzip_score(body),
    })
}

fn substructures(body: &Body) -> usize {
    let [ex, ey, ez] = body.extents();
    let (min, _) = body.bounds();
    let dense = body.bbox_materials();
    let idx = |p: [usize; 3]| (p[0] * ey + p[1]) * ez + p[2];
    let mut seen = vec![false; dense.len()];
    let mut regions = 0;
    let mut queue = VecDeque::new();
    for (p, m) in body.voxels() {
        let local = [0, 1, 2].map(|a| (p[a] - min[a]) as usize);
        let i = idx(local);
        if seen[i] {
            continue;
        }
        regions += 1;
        seen[i] = true;
        queue.push_back(local);
        while let Some(q) = queue.pop_front() {
            for d in FACE_OFFSETS {
                let n = [0, 1, 2].map(|a| q[a] as i64 + d[a] as i64);
                if n.iter().zip([ex, ey, ez]).any(|(&c, e)| c < 0 || c >= e as i64) {
                    continue;
                }
                let n = n.map(|c| c as usize);
                let j = idx(n);
                if !seen[j] && dense[j] == *m {
                    seen[j] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    regions
}

fn symmetry(body: &Body) -> f64 {
    let (min, max) = body.bounds();
    let [_, ey, ez] = body.extents();
    let dense = body.bbox_materials();
    let at = |x: usize, y: usize, z: usize| dense[(x * ey + y) * ez + z];
    let volume = body.volume() as f64;
    let mut total = 0.0;
    for axis in 0..3 {
        let mut agree = 0usize;
        for (p, m) in body.voxels() {
            let mut l = [0, 1, 2].map(|a| (p[a] - min[a]) as usize);
            l[axis] = (max[axis] - p[axis]) as usize;
            if at(l[0], l[1], l[2]) == *m {
                agree += 1;
            }
        }
        total += agree as f64 / volume;
    }
    total / 3.0
}

fn gzip_score(body: &Body) -> f64 {
    let raw: Vec<u8> = body.bbox_materials().iter().map(|m| m.0).collect();
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(6));
    enc.write_all(&raw).expect("in-memory deflate");
    let packed = enc.finish().expect("in-memory deflate");
    packed.len() as f64 / raw.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::extract_body;

    fn cube(n: i32, m: u8) -> VoxelGrid {
        let mut g = VoxelGrid::new(8, 4);
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    g.set([x + 1, y + 1, z + 1], MaterialId(m)).unwrap();
                }
            }
        }
        g
    }

    #[test]
    fn solid_passive_cube() {
        let g = cube(4, 1);
        let b = extract_body(&g).unwrap();
        let m = compute_metrics(&g, &b).unwrap();
        assert_eq!(m.volume, 64);
        assert_eq!(m.surface_ratio, 56.0 / 64.0);
        assert_eq!(m.passive_ratio, 1.0);
        assert_eq!(m.lcc_ratio, 1.0);
        assert_eq!(m.substructures, 1);
        assert_eq!(m.symmetry, 1.0);
        assert!(m.gzip_score > 0.0);
    }

    #[test]
    fn odd_corner_breaks_symmetry() {
        let mut g = cube(4, 2);
        g.set([1, 1, 1], MaterialId(3)).unwrap();
        let b = extract_body(&g).unwrap();
        let m = compute_metrics(&g, &b).unwrap();
        assert_eq!(m.substructures, 2);
        assert!(m.symmetry < 1.0);
        assert_eq!(m.passive_ratio, 0.0);
    }

    #[test]
    fn lcc_ratio_counts_stray_voxels() {
        let mut g = cube(2, 1);
        g.set([6, 6, 6], MaterialId(1)).unwrap();
        let b = extract_body(&g).unwrap();
        let m = compute_metrics(&g, &b).unwrap();
        assert_eq!(m.lcc_ratio, 8.0 / 9.0);
        assert_eq!(m.surface_ratio, 1.0);
    }
}
