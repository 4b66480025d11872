use std::collections::VecDeque;

use super::{MaterialId, VoxelGrid, FACE_OFFSETS};

/// The largest 6-connected component of non-null cells of a grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Body {
    /// Member voxels in lexicographic `(x, y, z)` order.
    voxels: Vec<([i32; 3], MaterialId)>,
    min: [i32; 3],
    max: [i32; 3],
}

impl Body {
    /// Builds a body from voxels that are already known to be one component.
    pub fn from_voxels(mut voxels: Vec<([i32; 3], MaterialId)>) -> Option<Body> {
        if voxels.is_empty() {
            return None;
        }
        voxels.sort_unstable_by_key(|(p, _)| *p);
        let mut min = [i32::MAX; 3];
        let mut max = [i32::MIN; 3];
        for (p, _) in &voxels {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Some(Body { voxels, min, max })
    }

    pub fn voxels(&self) -> &[([i32; 3], MaterialId)] {
        &self.voxels
    }

    pub fn volume(&self) -> usize {
        self.voxels.len()
    }

    /// Inclusive bounding box `(min, max)`.
    pub fn bounds(&self) -> ([i32; 3], [i32; 3]) {
        (self.min, self.max)
    }

    /// Bounding-box extents in voxels.
    pub fn extents(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| (self.max[a] - self.min[a] + 1) as usize)
    }

    pub fn material_at(&self, p: [i32; 3]) -> MaterialId {
        match self.voxels.binary_search_by_key(&p, |(q, _)| *q) {
            Ok(i) => self.voxels[i].1,
            Err(_) => MaterialId::NULL,
        }
    }

    /// Dense material array over the bounding box, `x` slowest.
    pub fn bbox_materials(&self) -> Vec<MaterialId> {
        let [ex, ey, ez] = self.extents();
        let mut dense = vec![MaterialId::NULL; ex * ey * ez];
        for (p, m) in &self.voxels {
            let [x, y, z] = [0, 1, 2].map(|a| (p[a] - self.min[a]) as usize);
            dense[(x * ey + y) * ez + z] = *m;
        }
        dense
    }

    /// Renders the body alone into an otherwise empty grid.
    pub fn render(&self, rho: usize, k: u8) -> VoxelGrid {
        let mut g = VoxelGrid::new(rho, k);
        for (p, m) in &self.voxels {
            let i = g.index(*p);
            g.cells[i] = *m;
        }
        g
    }
}

/// Extracts the largest 6-connected component of non-null cells, treating all
/// physical materials alike. Equal-size components are resolved in favour of
/// the one holding the lexicographically smallest cell. Returns `None` for an
/// all-null grid.
pub fn extract_body(grid: &VoxelGrid) -> Option<Body> {
    let n = grid.len();
    let cells = grid.cells();
    let mut label = vec![u32::MAX; n];
    let mut queue = VecDeque::new();
    let mut best: Option<(u32, usize)> = None;
    let mut next = 0u32;

    // Scanning in index order means each component is first seen at its
    // lexicographically smallest cell, so a strict `>` keeps the tie-break.
    for start in 0..n {
        if cells[start].is_null() || label[start] != u32::MAX {
            continue;
        }
        let id = next;
        next += 1;
        label[start] = id;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let p = grid.coords(i);
            for d in FACE_OFFSETS {
                let q = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
                if !grid.contains(q) {
                    continue;
                }
                let j = grid.index(q);
                if !cells[j].is_null() && label[j] == u32::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((id, size));
        }
    }

    let (id, size) = best?;
    let mut voxels = Vec::with_capacity(size);
    for (i, &l) in label.iter().enumerate() {
        if l == id {
            voxels.push((grid.coords(i), cells[i]));
        }
    }
    Body::from_voxels(voxels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel() {
        let mut g = VoxelGrid::new(4, 2);
        g.set([0, 0, 0], MaterialId(1)).unwrap();
        let b = extract_body(&g).unwrap();
        assert_eq!(b.voxels(), &[([0, 0, 0], MaterialId(1))]);
    }

    #[test]
    fn tie_prefers_lexicographically_smallest() {
        let mut g = VoxelGrid::new(4, 2);
        g.set([0, 0, 2], MaterialId(1)).unwrap();
        g.set([0, 0, 0], MaterialId(1)).unwrap();
        let b = extract_body(&g).unwrap();
        assert_eq!(b.voxels(), &[([0, 0, 0], MaterialId(1))]);
    }

    #[test]
    fn empty_grid_has_no_body() {
        assert!(extract_body(&VoxelGrid::new(3, 4)).is_none());
    }

    #[test]
    fn materials_are_pooled() {
        let mut g = VoxelGrid::new(4, 4);
        g.set([1, 1, 1], MaterialId(1)).unwrap();
        g.set([1, 1, 2], MaterialId(2)).unwrap();
        g.set([1, 2, 2], MaterialId(3)).unwrap();
        g.set([3, 3, 3], MaterialId(2)).unwrap();
        assert_eq!(extract_body(&g).unwrap().volume(), 3);
    }

    #[test]
    fn diagonal_neighbours_are_not_connected() {
        let mut g = VoxelGrid::new(4, 2);
        g.set([1, 1, 1], MaterialId(1)).unwrap();
        g.set([2, 2, 1], MaterialId(1)).unwrap();
        g.set([2, 2, 2], MaterialId(1)).unwrap();
        let b = extract_body(&g).unwrap();
        assert_eq!(b.volume(), 2);
        assert_eq!(b.bounds(), ([2, 2, 1], [2, 2, 2]));
    }
}
