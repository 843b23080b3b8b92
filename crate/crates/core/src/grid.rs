//! Uniform Cartesian background grids, face-neighbor topology and strip
//! partitions into logical ranks with a one-cell ghost layer.
//!
//! Cells are numbered with the x index running fastest:
//! `global = i + nx * (j + ny * k)`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global index of a background cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellIndex(pub usize);

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for CellIndex {
    fn from(value: usize) -> Self {
        CellIndex(value)
    }
}

/// Axis-aligned box; unused axes (beyond `dim`) are ignored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellBox {
    pub dim: usize,
    pub lo: [f64; 3],
    pub size: [f64; 3],
}

impl CellBox {
    pub fn new(dim: usize, lo: &[f64], size: &[f64]) -> Self {
        let mut b = CellBox { dim, lo: [0.0; 3], size: [1.0; 3] };
        b.lo[..dim].copy_from_slice(&lo[..dim]);
        b.size[..dim].copy_from_slice(&size[..dim]);
        b
    }

    pub fn unit(dim: usize) -> Self {
        CellBox { dim, lo: [0.0; 3], size: [1.0; 3] }
    }

    pub fn volume(&self) -> f64 {
        self.size[..self.dim].iter().product()
    }

    /// Maps reference coordinates in `[0,1]^dim` to physical coordinates.
    pub fn to_physical(&self, xi: &[f64], out: &mut [f64]) {
        for a in 0..self.dim {
            out[a] = self.lo[a] + xi[a] * self.size[a];
        }
    }

    pub fn to_reference(&self, x: &[f64], out: &mut [f64]) {
        for a in 0..self.dim {
            out[a] = (x[a] - self.lo[a]) / self.size[a];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartesianGrid {
    dim: usize,
    cells: [usize; 3],
    origin: [f64; 3],
    spacing: [f64; 3],
}

impl CartesianGrid {
    /// Builds a grid covering `origin + [0, extent]` with `cells_per_axis` cells.
    pub fn new(dim: usize, cells_per_axis: &[usize], origin: &[f64], extent: &[f64]) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if cells_per_axis.len() != dim || origin.len() != dim || extent.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} entries per axis argument, got cells={}, origin={}, extent={}",
                cells_per_axis.len(),
                origin.len(),
                extent.len()
            )));
        }
        let mut cells = [1usize; 3];
        let mut org = [0.0; 3];
        let mut spacing = [1.0; 3];
        for a in 0..dim {
            if cells_per_axis[a] == 0 {
                return Err(Error::InvalidGrid(format!("zero cells along axis {a}")));
            }
            if !(extent[a] > 0.0) || !extent[a].is_finite() {
                return Err(Error::InvalidGrid(format!("non-positive extent {} along axis {a}", extent[a])));
            }
            if !origin[a].is_finite() {
                return Err(Error::InvalidGrid(format!("non-finite origin along axis {a}")));
            }
            cells[a] = cells_per_axis[a];
            org[a] = origin[a];
            spacing[a] = extent[a] / cells_per_axis[a] as f64;
        }
        Ok(CartesianGrid { dim, cells, origin: org, spacing })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn num_cells(&self) -> usize {
        self.cells[..self.dim].iter().product()
    }

    /// Largest cell edge length.
    pub fn h(&self) -> f64 {
        self.spacing().iter().cloned().fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Coordinate of the `k`-th grid line along `axis`.
    pub fn grid_line(&self, axis: usize, k: usize) -> f64 {
        self.origin[axis] + k as f64 * self.spacing[axis]
    }

    pub fn check(&self, cell: CellIndex) -> Result<()> {
        if cell.0 >= self.num_cells() {
            return Err(Error::CellOutOfRange { cell: cell.0, count: self.num_cells() });
        }
        Ok(())
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> {
        (0..self.num_cells()).map(CellIndex)
    }

    pub fn multi_index(&self, cell: CellIndex) -> [usize; 3] {
        let [nx, ny, _] = self.cells;
        let g = cell.0;
        [g % nx, (g / nx) % ny, g / (nx * ny)]
    }

    pub fn cell_index(&self, ijk: &[usize]) -> Option<CellIndex> {
        let mut g = 0usize;
        let mut stride = 1usize;
        for a in 0..self.dim {
            if ijk[a] >= self.cells[a] {
                return None;
            }
            g += ijk[a] * stride;
            stride *= self.cells[a];
        }
        Some(CellIndex(g))
    }

    pub fn cell_box(&self, cell: CellIndex) -> CellBox {
        let ijk = self.multi_index(cell);
        let mut lo = [0.0; 3];
        for a in 0..self.dim {
            lo[a] = self.grid_line(a, ijk[a]);
        }
        CellBox { dim: self.dim, lo, size: self.spacing }
    }

    pub fn cell_center(&self, cell: CellIndex) -> [f64; 3] {
        let b = self.cell_box(cell);
        let mut c = [0.0; 3];
        for a in 0..self.dim {
            c[a] = b.lo[a] + 0.5 * b.size[a];
        }
        c
    }

    /// Face neighbors ordered by axis, then lower before upper.
    pub fn face_neighbors(&self, cell: CellIndex) -> Result<Vec<CellIndex>> {
        self.check(cell)?;
        Ok(self.neighbors_unchecked(cell).collect())
    }

    pub(crate) fn neighbors_unchecked(&self, cell: CellIndex) -> impl Iterator<Item = CellIndex> + '_ {
        let ijk = self.multi_index(cell);
        let strides = [1, self.cells[0], self.cells[0] * self.cells[1]];
        (0..self.dim).flat_map(move |a| {
            let lower = (ijk[a] > 0).then(|| CellIndex(cell.0 - strides[a]));
            let upper = (ijk[a] + 1 < self.cells[a]).then(|| CellIndex(cell.0 + strides[a]));
            lower.into_iter().chain(upper)
        })
    }

    pub fn are_face_neighbors(&self, a: CellIndex, b: CellIndex) -> bool {
        let ia = self.multi_index(a);
        let ib = self.multi_index(b);
        let mut diff = 0;
        for ax in 0..self.dim {
            let d = ia[ax].abs_diff(ib[ax]);
            if d > 1 {
                return false;
            }
            diff += d;
        }
        diff == 1
    }

    /// Interior faces as `(lower, upper, axis)` with `lower < upper`.
    pub fn interior_faces(&self) -> impl Iterator<Item = (CellIndex, CellIndex, usize)> + '_ {
        let strides = [1, self.cells[0], self.cells[0] * self.cells[1]];
        self.cells().flat_map(move |c| {
            let ijk = self.multi_index(c);
            (0..self.dim).filter_map(move |a| {
                (ijk[a] + 1 < self.cells[a]).then(|| (c, CellIndex(c.0 + strides[a]), a))
            })
        })
    }
}

/// Static assignment of cells to logical ranks.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    rank_count: usize,
    owner: Vec<usize>,
    owned: Vec<Vec<CellIndex>>,
    ghosts: Vec<BTreeSet<CellIndex>>,
}

impl Partition {
    /// All cells on rank 0.
    pub fn single(grid: &CartesianGrid) -> Self {
        Self::from_owner(grid, 1, vec![0; grid.num_cells()])
    }

    /// Contiguous, equal-as-possible slabs along `axis`; the first
    /// `n % rank_count` ranks receive one extra layer.
    pub fn strips(grid: &CartesianGrid, rank_count: usize, axis: usize) -> Result<Self> {
        if rank_count == 0 {
            return Err(Error::InvalidPartition("rank count must be positive".into()));
        }
        if axis >= grid.dim() {
            return Err(Error::InvalidPartition(format!("axis {axis} out of range for {}D grid", grid.dim())));
        }
        let n = grid.cells_per_axis()[axis];
        if rank_count > n {
            return Err(Error::InvalidPartition(format!(
                "{rank_count} ranks exceed the {n} cell layers along axis {axis}"
            )));
        }
        let base = n / rank_count;
        let extra = n % rank_count;
        let mut layer_owner = Vec::with_capacity(n);
        for r in 0..rank_count {
            let len = base + usize::from(r < extra);
            layer_owner.extend(std::iter::repeat(r).take(len));
        }
        let owner = grid.cells().map(|c| layer_owner[grid.multi_index(c)[axis]]).collect();
        Ok(Self::from_owner(grid, rank_count, owner))
    }

    fn from_owner(grid: &CartesianGrid, rank_count: usize, owner: Vec<usize>) -> Self {
        let mut owned = vec![Vec::new(); rank_count];
        let mut ghosts = vec![BTreeSet::new(); rank_count];
        for c in grid.cells() {
            let r = owner[c.0];
            owned[r].push(c);
            for n in grid.neighbors_unchecked(c) {
                if owner[n.0] != r {
                    ghosts[r].insert(n);
                }
            }
        }
        Partition { rank_count, owner, owned, ghosts }
    }

    pub fn rank_count(&self) -> usize {
        self.rank_count
    }

    pub fn owner_of(&self, cell: CellIndex) -> usize {
        self.owner[cell.0]
    }

    pub fn owned(&self, rank: usize) -> &[CellIndex] {
        &self.owned[rank]
    }

    pub fn ghosts(&self, rank: usize) -> &BTreeSet<CellIndex> {
        &self.ghosts[rank]
    }

    pub fn is_owned(&self, rank: usize, cell: CellIndex) -> bool {
        self.owner[cell.0] == rank
    }

    /// Owned or ghost on `rank`.
    pub fn in_view(&self, rank: usize, cell: CellIndex) -> bool {
        self.is_owned(rank, cell) || self.ghosts[rank].contains(&cell)
    }

    /// Ranks (other than the owner) that hold `cell` as a ghost.
    pub fn ghost_holders(&self, cell: CellIndex) -> impl Iterator<Item = usize> + '_ {
        (0..self.rank_count).filter(move |&r| r != self.owner[cell.0] && self.ghosts[r].contains(&cell))
    }
}

/// Strip partition; see [`Partition::strips`].
pub fn partition_strips(grid: &CartesianGrid, rank_count: usize, axis: usize) -> Result<Partition> {
    Partition::strips(grid, rank_count, axis)
}

/// Face neighbors; see [`CartesianGrid::face_neighbors`].
pub fn face_neighbors(grid: &CartesianGrid, cell: CellIndex) -> Result<Vec<CellIndex>> {
    grid.face_neighbors(cell)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit2(n: usize) -> CartesianGrid {
        CartesianGrid::new(2, &[n, n], &[0.0, 0.0], &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn small_grid_spacing() {
        let g = unit2(2);
        assert_eq!(g.num_cells(), 4);
        assert_eq!(g.spacing(), &[0.5, 0.5]);
    }

    #[test]
    fn scenario_grid_sizes() {
        let l = 1.0;
        let g = CartesianGrid::new(3, &[30, 30, 30], &[-0.5 * l; 3], &[l; 3]).unwrap();
        assert_eq!(g.num_cells(), 27000);
        let g = CartesianGrid::new(2, &[64, 32], &[-1.0, -0.5], &[2.0, 1.0]).unwrap();
        assert_eq!(g.num_cells(), 2048);
    }

    #[test]
    fn construction_errors() {
        assert!(CartesianGrid::new(2, &[0, 2], &[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(CartesianGrid::new(2, &[2, 2], &[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(CartesianGrid::new(2, &[2, 2], &[0.0, 0.0], &[-1.0, 1.0]).is_err());
        assert!(CartesianGrid::new(1, &[2], &[0.0], &[1.0]).is_err());
        assert!(CartesianGrid::new(2, &[2, 2, 2], &[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn neighbor_counts() {
        let g = unit2(2);
        assert_eq!(g.face_neighbors(CellIndex(0)).unwrap().len(), 2);
        let g3 = CartesianGrid::new(3, &[3, 3, 3], &[0.0; 3], &[1.0; 3]).unwrap();
        let center = g3.cell_index(&[1, 1, 1]).unwrap();
        assert_eq!(
            g3.face_neighbors(center).unwrap(),
            vec![CellIndex(12), CellIndex(14), CellIndex(10), CellIndex(16), CellIndex(4), CellIndex(22)]
        );
        let strip = CartesianGrid::new(2, &[8, 1], &[0.0, 0.0], &[8.0, 1.0]).unwrap();
        assert_eq!(strip.face_neighbors(CellIndex(0)).unwrap(), vec![CellIndex(1)]);
        assert!(strip.face_neighbors(CellIndex(8)).is_err());
    }

    #[test]
    fn multi_index_roundtrip() {
        let g = CartesianGrid::new(3, &[4, 3, 2], &[0.0; 3], &[1.0; 3]).unwrap();
        for c in g.cells() {
            let ijk = g.multi_index(c);
            assert_eq!(g.cell_index(&ijk), Some(c));
        }
    }

    #[test]
    fn neighborship_is_symmetric_and_matches_multi_index_rule() {
        let g = CartesianGrid::new(3, &[4, 3, 5], &[0.0; 3], &[1.0; 3]).unwrap();
        for a in g.cells() {
            let na = g.face_neighbors(a).unwrap();
            for b in g.cells() {
                let is_n = na.contains(&b);
                assert_eq!(is_n, g.are_face_neighbors(a, b));
                if is_n {
                    assert!(g.face_neighbors(b).unwrap().contains(&a));
                }
            }
        }
    }

    #[test]
    fn strip_partition_of_eight_cells() {
        let strip = CartesianGrid::new(2, &[8, 1], &[0.0, 0.0], &[8.0, 1.0]).unwrap();
        let p = partition_strips(&strip, 4, 0).unwrap();
        for r in 0..4 {
            assert_eq!(p.owned(r), &[CellIndex(2 * r), CellIndex(2 * r + 1)]);
        }
        assert_eq!(p.ghosts(0).iter().copied().collect::<Vec<_>>(), vec![CellIndex(2)]);
        assert_eq!(p.ghosts(1).iter().copied().collect::<Vec<_>>(), vec![CellIndex(1), CellIndex(4)]);
        assert!(partition_strips(&strip, 9, 0).is_err());
        assert!(partition_strips(&strip, 0, 0).is_err());
    }

    #[test]
    fn single_rank_has_no_ghosts() {
        let g = unit2(5);
        let p = partition_strips(&g, 1, 0).unwrap();
        assert_eq!(p.owned(0).len(), 25);
        assert!(p.ghosts(0).is_empty());
        assert_eq!(p, Partition::single(&g));
    }

    #[test]
    fn two_rank_ghosts_are_facing_columns() {
        let g = unit2(30);
        let p = partition_strips(&g, 2, 0).unwrap();
        // brute-force neighbor closure
        for r in 0..2 {
            let mut expect = BTreeSet::new();
            for c in g.cells() {
                if p.owner_of(c) != r {
                    continue;
                }
                for n in g.cells() {
                    if g.are_face_neighbors(c, n) && p.owner_of(n) != r {
                        expect.insert(n);
                    }
                }
            }
            assert_eq!(p.ghosts(r), &expect);
            let col = if r == 0 { 15 } else { 14 };
            assert!(expect.iter().all(|c| g.multi_index(*c)[0] == col));
            assert_eq!(expect.len(), 30);
        }
        assert_eq!(p, partition_strips(&g, 2, 0).unwrap());
    }

    #[test]
    fn partition_covers_and_is_disjoint() {
        let g = CartesianGrid::new(3, &[7, 4, 3], &[0.0; 3], &[1.0; 3]).unwrap();
        for ranks in 1..=7 {
            for axis in 0..1 {
                let p = partition_strips(&g, ranks, axis).unwrap();
                let mut seen = vec![false; g.num_cells()];
                for r in 0..ranks {
                    for c in p.owned(r) {
                        assert!(!seen[c.0]);
                        seen[c.0] = true;
                    }
                    assert!(p.ghosts(r).iter().all(|c| p.owner_of(*c) != r));
                }
                assert!(seen.iter().all(|s| *s));
            }
        }
    }

    #[test]
    fn interior_face_count() {
        let g = CartesianGrid::new(3, &[4, 3, 2], &[0.0; 3], &[1.0; 3]).unwrap();
        let expected = 3 * 3 * 2 + 4 * 2 * 2 + 4 * 3 * 1;
        assert_eq!(g.interior_faces().count(), expected);
    }
}
