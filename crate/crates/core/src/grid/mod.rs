//! The discrete design substrate.
//!
//! A [`VoxelGrid`] is a dense `ρ×ρ×ρ` lattice of [`MaterialId`]s. Cells are
//! stored with `x` as the slowest-varying index, then `y`, then `z`
//! (`index = (x·ρ + y)·ρ + z`). Material `0` is empty space.

mod body;
mod metrics;

pub use body::{extract_body, Body};
pub use metrics::{compute_metrics, BodyMetrics};

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

/// Face-adjacency offsets (6-connectivity).
pub const FACE_OFFSETS: [[i32; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

#[derive(Debug, Error)]
pub enum GridError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed grid file: {0}")]
    Format(String),
    #[error("material {material} out of range for k = {k}")]
    Material { material: u8, k: u8 },
    #[error("body is empty")]
    EmptyBody,
}

/// Index of a material channel. `0` is the null material.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MaterialId(pub u8);

impl MaterialId {
    pub const NULL: MaterialId = MaterialId(0);
    pub const PASSIVE: MaterialId = MaterialId(1);

    #[inline]
    pub fn is_null(self) -> bool {
        self.0 == 0
    }
}

/// A cubic block of voxels written by one design action. The block may hang
/// over the grid boundary; out-of-grid cells are ignored on deposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bundle {
    pub min_corner: [i32; 3],
    pub edge: u8,
    pub material: MaterialId,
}

impl Bundle {
    pub fn new(min_corner: [i32; 3], material: MaterialId) -> Self {
        Self { min_corner, edge: 2, material }
    }

    /// All covered cells, in lexicographic order, including out-of-grid ones.
    pub fn cells(&self) -> impl Iterator<Item = [i32; 3]> + '_ {
        let e = self.edge as i32;
        let [x0, y0, z0] = self.min_corner;
        (0..e).flat_map(move |dx| {
            (0..e).flat_map(move |dy| (0..e).map(move |dz| [x0 + dx, y0 + dy, z0 + dz]))
        })
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    resolution: usize,
    materials: u8,
    cells: Vec<MaterialId>,
}

impl std::fmt::Debug for VoxelGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VoxelGrid")
            .field("resolution", &self.resolution)
            .field("materials", &self.materials)
            .field("filled", &self.filled_count())
            .finish()
    }
}

impl VoxelGrid {
    /// An all-null grid with resolution `rho` and `k` material channels.
    pub fn new(rho: usize, k: u8) -> Self {
        assert!(rho > 0, "grid resolution must be positive");
        assert!(k >= 2, "need at least one physical material");
        Self { resolution: rho, materials: k, cells: vec![MaterialId::NULL; rho * rho * rho] }
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Number of material channels `k` (including null).
    #[inline]
    pub fn materials(&self) -> u8 {
        self.materials
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|m| m.is_null())
    }

    #[inline]
    pub fn cells(&self) -> &[MaterialId] {
        &self.cells
    }

    #[inline]
    pub fn contains(&self, p: [i32; 3]) -> bool {
        let r = self.resolution as i32;
        p.iter().all(|&c| (0..r).contains(&c))
    }

    #[inline]
    pub fn index(&self, p: [i32; 3]) -> usize {
        let r = self.resolution;
        (p[0] as usize * r + p[1] as usize) * r + p[2] as usize
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [i32; 3] {
        let r = self.resolution;
        [(index / (r * r)) as i32, ((index / r) % r) as i32, (index % r) as i32]
    }

    /// Material at `p`, or null for out-of-grid coordinates.
    #[inline]
    pub fn get(&self, p: [i32; 3]) -> MaterialId {
        if self.contains(p) {
            self.cells[self.index(p)]
        } else {
            MaterialId::NULL
        }
    }

    pub fn set(&mut self, p: [i32; 3], m: MaterialId) -> Result<(), GridError> {
        if m.0 >= self.materials {
            return Err(GridError::Material { material: m.0, k: self.materials });
        }
        let i = self.index(p);
        self.cells[i] = m;
        Ok(())
    }

    pub fn filled_count(&self) -> usize {
        self.cells.iter().filter(|m| !m.is_null()).count()
    }

    /// Writes `bundle.material` into every in-grid covered cell. Material 0
    /// erases. Later deposits overwrite earlier ones.
    pub fn deposit(&mut self, bundle: &Bundle) {
        debug_assert!(bundle.material.0 < self.materials);
        for p in bundle.cells() {
            if self.contains(p) {
                let i = self.index(p);
                self.cells[i] = bundle.material;
            }
        }
    }

    /// Functional form of [`VoxelGrid::deposit`].
    pub fn with_bundle(&self, bundle: &Bundle) -> VoxelGrid {
        let mut g = self.clone();
        g.deposit(bundle);
        g
    }

    /// Encodes the grid as a `VXG1` text file body.
    pub fn to_vxg(&self) -> String {
        let mut s = String::with_capacity(self.cells.len() * 2 + 32);
        let _ = writeln!(s, "VXG1 {} {}", self.resolution, self.materials);
        let r = self.resolution;
        for line in self.cells.chunks(r) {
            for (j, m) in line.iter().enumerate() {
                if j > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{}", m.0);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_vxg(text: &str) -> Result<Self, GridError> {
        let mut tokens = text.split_whitespace();
        if tokens.next() != Some("VXG1") {
            return Err(GridError::Format("missing VXG1 magic".into()));
        }
        let mut header = |what: &str| -> Result<usize, GridError> {
            tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| GridError::Format(format!("bad {what}")))
        };
        let rho = header("resolution")?;
        let k = header("material count")?;
        if rho == 0 || !(2..=255).contains(&k) {
            return Err(GridError::Format(format!("invalid header {rho} {k}")));
        }
        let mut grid = VoxelGrid::new(rho, k as u8);
        for (i, cell) in grid.cells.iter_mut().enumerate() {
            let t = tokens
                .next()
                .ok_or_else(|| GridError::Format(format!("expected {} cells, got {i}", rho * rho * rho)))?;
            let m: u8 = t.parse().map_err(|_| GridError::Format(format!("bad cell {t:?}")))?;
            if m as usize >= k {
                return Err(GridError::Material { material: m, k: k as u8 });
            }
            *cell = MaterialId(m);
        }
        if tokens.next().is_some() {
            return Err(GridError::Format("trailing data after cells".into()));
        }
        Ok(grid)
    }

    pub fn write_vxg<W: Write>(&self, mut w: W) -> Result<(), GridError> {
        w.write_all(self.to_vxg().as_bytes())?;
        Ok(())
    }

    pub fn read_vxg<R: BufRead>(mut r: R) -> Result<Self, GridError> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::from_vxg(&text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        Self::from_vxg(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GridError> {
        std::fs::write(path, self.to_vxg())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deposit_onto_empty_space() {
        let mut g = VoxelGrid::new(20, 4);
        g.deposit(&Bundle::new([5, 5, 5], MaterialId(2)));
        assert_eq!(g.filled_count(), 8);
        assert!(g.cells().iter().all(|m| m.0 == 0 || m.0 == 2));
        assert_eq!(g.get([6, 6, 6]), MaterialId(2));
        assert_eq!(g.get([7, 6, 6]), MaterialId::NULL);
    }

    #[test]
    fn most_recent_deposit_wins() {
        let mut g = VoxelGrid::new(20, 4);
        g.deposit(&Bundle::new([5, 5, 5], MaterialId(1)));
        g.deposit(&Bundle::new([5, 5, 5], MaterialId(3)));
        assert_eq!(g.cells().iter().filter(|m| m.0 == 3).count(), 8);
        assert_eq!(g.filled_count(), 8);
    }

    #[test]
    fn null_bundle_erases() {
        let mut g = VoxelGrid::new(20, 4);
        g.deposit(&Bundle::new([5, 5, 5], MaterialId(1)));
        g.deposit(&Bundle::new([5, 5, 5], MaterialId::NULL));
        assert!(g.is_empty());
    }

    #[test]
    fn overhanging_bundle_clips_to_grid() {
        let mut g = VoxelGrid::new(4, 2);
        g.deposit(&Bundle::new([-1, -1, -1], MaterialId(1)));
        assert_eq!(g.filled_count(), 1);
        g.deposit(&Bundle::new([3, 3, -1], MaterialId(1)));
        assert_eq!(g.filled_count(), 2);
        assert_eq!(g.get([3, 3, 0]), MaterialId(1));
    }

    #[test]
    fn coords_and_index_agree() {
        let g = VoxelGrid::new(5, 2);
        for i in 0..g.len() {
            assert_eq!(g.index(g.coords(i)), i);
        }
        assert_eq!(g.index([1, 0, 0]), 25);
        assert_eq!(g.index([0, 0, 1]), 1);
    }

    #[test]
    fn vxg_rejects_bad_input() {
        assert!(VoxelGrid::from_vxg("VXG2 2 2").is_err());
        assert!(VoxelGrid::from_vxg("VXG1 2 2 0 0 0").is_err());
        assert!(VoxelGrid::from_vxg("VXG1 1 2 5").is_err());
        assert!(VoxelGrid::from_vxg("VXG1 1 2 1 1").is_err());
        let g = VoxelGrid::from_vxg("VXG1 1 2\n1\n").unwrap();
        assert_eq!(g.get([0, 0, 0]), MaterialId(1));
    }
}
