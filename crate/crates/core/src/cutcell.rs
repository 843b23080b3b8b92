//! Volume fractions of the two species in every background cell.
//!
//! Each cell is bisected recursively. A sub-box whose corner and center
//! samples share one sign (ignoring exact zeros) is pure; a box still mixed
//! at `max_depth` is resolved on a fixed `3^dim` probe lattice.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LevelSetField;
use crate::grid::{CartesianGrid, CellBox, CellIndex};
use crate::parallel::map_range;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Species {
    A,
    B,
}

impl Species {
    pub const ALL: [Species; 2] = [Species::A, Species::B];

    pub fn index(self) -> usize {
        match self {
            Species::A => 0,
            Species::B => 1,
        }
    }

    pub fn other(self) -> Species {
        match self {
            Species::A => Species::B,
            Species::B => Species::A,
        }
    }

    fn of_value(v: f64) -> Species {
        if v < 0.0 {
            Species::A
        } else {
            Species::B
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Species::A => "A",
            Species::B => "B",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub max_depth: u32,
    pub gauss_order: usize,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        QuadratureRule { max_depth: 6, gauss_order: 2 }
    }
}

/// Piece of the reference cell `[0,1]^dim` produced by the subdivision.
#[derive(Clone, Debug, PartialEq)]
pub enum SubRegion<'a> {
    Pure { lo: [f64; 3], side: f64, species: Species },
    /// Each probe carries `side^dim / 3^dim` of volume.
    Mixed { lo: [f64; 3], side: f64, probes: &'a [([f64; 3], Species)] },
}

const PROBES_PER_AXIS: usize = 3;

struct Subdivider<'f, V> {
    field: &'f LevelSetField,
    cell: CellBox,
    t: f64,
    max_depth: u32,
    visit: V,
    probes: Vec<([f64; 3], Species)>,
}

impl<V: FnMut(SubRegion<'_>)> Subdivider<'_, V> {
    fn eval(&self, xi: &[f64; 3]) -> Result<f64> {
        let mut x = [0.0; 3];
        self.cell.to_physical(xi, &mut x);
        let dim = self.cell.dim;
        let v = self.field.evaluate(&x[..dim], self.t);
        if !v.is_finite() {
            return Err(Error::NonFiniteLevelSet { point: x[..dim].to_vec(), value: v });
        }
        Ok(v)
    }

    fn run(&mut self, lo: [f64; 3], depth: u32) -> Result<()> {
        let dim = self.cell.dim;
        let side = 0.5f64.powi(depth as i32);
        let mut neg = false;
        let mut pos = false;
        for corner in 0..(1usize << dim) {
            let mut xi = lo;
            for a in 0..dim {
                if corner >> a & 1 == 1 {
                    xi[a] += side;
                }
            }
            let v = self.eval(&xi)?;
            neg |= v < 0.0;
            pos |= v > 0.0;
        }
        let mut center = lo;
        for c in center.iter_mut().take(dim) {
            *c += 0.5 * side;
        }
        let v = self.eval(&center)?;
        neg |= v < 0.0;
        pos |= v > 0.0;

        if !(neg && pos) {
            let species = if neg { Species::A } else { Species::B };
            (self.visit)(SubRegion::Pure { lo, side, species });
            return Ok(());
        }
        if depth >= self.max_depth {
            self.probes.clear();
            let n = PROBES_PER_AXIS;
            let total = n.pow(dim as u32);
            for k in 0..total {
                let mut xi = lo;
                let mut rest = k;
                for a in 0..dim {
                    xi[a] += side * ((rest % n) as f64 + 0.5) / n as f64;
                    rest /= n;
                }
                let v = self.eval(&xi)?;
                self.probes.push((xi, Species::of_value(v)));
            }
            let probes = std::mem::take(&mut self.probes);
            (self.visit)(SubRegion::Mixed { lo, side, probes: &probes });
            self.probes = probes;
            return Ok(());
        }
        let half = 0.5 * side;
        for child in 0..(1usize << dim) {
            let mut clo = lo;
            for a in 0..dim {
                if child >> a & 1 == 1 {
                    clo[a] += half;
                }
            }
            self.run(clo, depth + 1)?;
        }
        Ok(())
    }
}

/// Walks the subdivision of `cell` and hands every leaf region to `visit`.
pub fn decompose_cell(
    field: &LevelSetField,
    cell: CellBox,
    t: f64,
    rule: &QuadratureRule,
    visit: impl FnMut(SubRegion<'_>),
) -> Result<()> {
    let mut s = Subdivider { field, cell, t, max_depth: rule.max_depth, visit, probes: Vec::new() };
    s.run([0.0; 3], 0)
}

/// Species A volume fraction of `cell_box` and its complement.
pub fn box_fraction(field: &LevelSetField, cell_box: CellBox, t: f64, rule: &QuadratureRule) -> Result<(f64, f64)> {
    let dim = cell_box.dim as i32;
    let mut frac_a = 0.0;
    let probe_count = (PROBES_PER_AXIS as f64).powi(dim);
    decompose_cell(field, cell_box, t, rule, |r| match r {
        SubRegion::Pure { side, species: Species::A, .. } => frac_a += side.powi(dim),
        SubRegion::Pure { .. } => {}
        SubRegion::Mixed { side, probes, .. } => {
            let n = probes.iter().filter(|p| p.1 == Species::A).count();
            frac_a += side.powi(dim) * n as f64 / probe_count;
        }
    })?;
    let frac_a = frac_a.clamp(0.0, 1.0);
    Ok((frac_a, 1.0 - frac_a))
}

pub fn cell_fraction(
    grid: &CartesianGrid,
    field: &LevelSetField,
    cell: CellIndex,
    t: f64,
    rule: &QuadratureRule,
) -> Result<(f64, f64)> {
    grid.check(cell)?;
    if field.dim() != grid.dim() {
        return Err(Error::DimensionMismatch(format!("{}D field on {}D grid", field.dim(), grid.dim())));
    }
    box_fraction(field, grid.cell_box(cell), t, rule)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Face {
    pub lower: CellIndex,
    pub upper: CellIndex,
    pub axis: usize,
}

/// Ownership of an interface lying on a cell face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidingOwner {
    pub owner: CellIndex,
    /// Species the face belongs to: the one that is empty in the owner.
    pub edge_species: Species,
}

pub const DEFAULT_ZERO_TOL: f64 = 1e-12;
const COINCIDING_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct CutCellMesh {
    grid: CartesianGrid,
    t: f64,
    frac: [Vec<f64>; 2],
    cut: Vec<bool>,
    coinciding: Vec<Face>,
    owners: BTreeMap<Face, CoincidingOwner>,
    field: Option<LevelSetField>,
    rule: QuadratureRule,
    zero_tol: f64,
}

impl CutCellMesh {
    /// Mesh from precomputed species-A fractions, for hand-built fixtures.
    /// Faces between pure cells of different species are treated as coinciding.
    pub fn from_fractions(grid: &CartesianGrid, t: f64, frac_a: Vec<f64>) -> Result<Self> {
        if frac_a.len() != grid.num_cells() {
            return Err(Error::DimensionMismatch(format!(
                "{} fractions for {} cells",
                frac_a.len(),
                grid.num_cells()
            )));
        }
        if let Some(f) = frac_a.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::InvalidParameter(format!("fraction {f} outside [0,1]")));
        }
        let mut mesh = Self::assemble(grid, t, frac_a, None, QuadratureRule::default(), 0.0);
        mesh.coinciding = mesh.pure_interfaces().collect();
        Ok(assign_coinciding_interface(mesh))
    }

    fn assemble(
        grid: &CartesianGrid,
        t: f64,
        frac_a: Vec<f64>,
        field: Option<LevelSetField>,
        rule: QuadratureRule,
        zero_tol: f64,
    ) -> Self {
        let frac_a: Vec<f64> = frac_a
            .into_iter()
            .map(|f| {
                if f < zero_tol {
                    0.0
                } else if 1.0 - f < zero_tol {
                    1.0
                } else {
                    f
                }
            })
            .collect();
        let frac_b: Vec<f64> = frac_a.iter().map(|f| 1.0 - f).collect();
        let cut = frac_a.iter().zip(&frac_b).map(|(a, b)| *a > 0.0 && *b > 0.0).collect();
        CutCellMesh {
            grid: grid.clone(),
            t,
            frac: [frac_a, frac_b],
            cut,
            coinciding: Vec::new(),
            owners: BTreeMap::new(),
            field,
            rule,
            zero_tol,
        }
    }

    fn pure_interfaces(&self) -> impl Iterator<Item = Face> + '_ {
        self.grid.interior_faces().filter_map(move |(lower, upper, axis)| {
            let (fl, fu) = (self.frac[0][lower.0], self.frac[0][upper.0]);
            let differ = (fl == 1.0 && fu == 0.0) || (fl == 0.0 && fu == 1.0);
            differ.then_some(Face { lower, upper, axis })
        })
    }

    pub fn grid(&self) -> &CartesianGrid {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn zero_tol(&self) -> f64 {
        self.zero_tol
    }

    pub fn field(&self) -> Option<&LevelSetField> {
        self.field.as_ref()
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn fraction(&self, cell: CellIndex, species: Species) -> f64 {
        self.frac[species.index()][cell.0]
    }

    pub fn fractions(&self, species: Species) -> &[f64] {
        &self.frac[species.index()]
    }

    pub fn is_cut(&self, cell: CellIndex) -> bool {
        self.cut[cell.0]
    }

    pub fn cut_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.grid.cells().filter(|c| self.cut[c.0])
    }

    pub fn coinciding_faces(&self) -> &[Face] {
        &self.coinciding
    }

    pub fn interface_owner(&self, face: &Face) -> Option<CoincidingOwner> {
        self.owners.get(face).copied()
    }

    pub fn interface_owners(&self) -> impl Iterator<Item = (&Face, &CoincidingOwner)> {
        self.owners.iter()
    }

    /// Species coupled across the face between two neighbors.
    pub fn edge_species(&self, a: CellIndex, b: CellIndex) -> Vec<Species> {
        let (lower, upper) = if a < b { (a, b) } else { (b, a) };
        if let Some(o) = self.owners.iter().find(|(f, _)| f.lower == lower && f.upper == upper) {
            return vec![o.1.edge_species];
        }
        Species::ALL
            .into_iter()
            .filter(|s| self.fraction(a, *s) > 0.0 && self.fraction(b, *s) > 0.0)
            .collect()
    }

    pub fn same_grid(&self, other: &CutCellMesh) -> bool {
        self.grid == other.grid
    }

    pub fn to_dump(&self) -> MeshDump {
        MeshDump {
            time: self.t,
            dim: self.grid.dim(),
            cells_per_axis: self.grid.cells_per_axis().to_vec(),
            cells: self
                .grid
                .cells()
                .map(|c| CellDump {
                    cell: c,
                    frac_a: self.fraction(c, Species::A),
                    frac_b: self.fraction(c, Species::B),
                    cut: self.is_cut(c),
                })
                .collect(),
            coinciding: self
                .owners
                .iter()
                .map(|(f, o)| CoincidingDump { face: *f, owner: o.owner, edge_species: o.edge_species })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDump {
    pub cell: CellIndex,
    pub frac_a: f64,
    pub frac_b: f64,
    pub cut: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidingDump {
    pub face: Face,
    pub owner: CellIndex,
    pub edge_species: Species,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshDump {
    pub time: f64,
    pub dim: usize,
    pub cells_per_axis: Vec<usize>,
    pub cells: Vec<CellDump>,
    pub coinciding: Vec<CoincidingDump>,
}

fn face_is_on_interface(grid: &CartesianGrid, field: &LevelSetField, face: &Face, t: f64) -> bool {
    let dim = grid.dim();
    let b = grid.cell_box(face.upper);
    let tangents: Vec<usize> = (0..dim).filter(|a| *a != face.axis).collect();
    // face corners plus a 3^(dim-1) lattice
    let mut samples: Vec<Vec<f64>> = Vec::new();
    let pts = [0.0, 1.0 / 6.0, 0.5, 5.0 / 6.0, 1.0];
    let n = pts.len();
    for k in 0..n.pow(tangents.len() as u32) {
        let mut xi = [0.0; 3];
        let mut rest = k;
        for a in &tangents {
            xi[*a] = pts[rest % n];
            rest /= n;
        }
        samples.push(xi.to_vec());
    }
    samples.iter().all(|xi| {
        let mut x = [0.0; 3];
        b.to_physical(xi, &mut x);
        field.evaluate(&x[..dim], t).abs() < COINCIDING_TOL
    })
}

pub fn build_cutcell_mesh(
    grid: &CartesianGrid,
    field: &LevelSetField,
    t: f64,
    rule: &QuadratureRule,
    zero_tol: f64,
) -> Result<CutCellMesh> {
    if !(0.0..0.5).contains(&zero_tol) {
        return Err(Error::InvalidParameter(format!("zero tolerance {zero_tol} outside [0, 0.5)")));
    }
    if field.dim() != grid.dim() {
        return Err(Error::DimensionMismatch(format!("{}D field on {}D grid", field.dim(), grid.dim())));
    }
    let fracs = map_range(grid.num_cells(), |i| box_fraction(field, grid.cell_box(CellIndex(i)), t, rule));
    let frac_a = fracs.into_iter().map(|r| r.map(|f| f.0)).collect::<Result<Vec<_>>>()?;
    let mut mesh = CutCellMesh::assemble(grid, t, frac_a, Some(field.clone()), *rule, zero_tol);
    let candidates: Vec<Face> = mesh.pure_interfaces().collect();
    mesh.coinciding = candidates.into_iter().filter(|f| face_is_on_interface(grid, field, f, t)).collect();
    Ok(assign_coinciding_interface(mesh))
}

/// Gives every coinciding face to its lower-index cell; the face belongs to
/// the species that is empty in that cell.
pub fn assign_coinciding_interface(mut mesh: CutCellMesh) -> CutCellMesh {
    mesh.owners = mesh
        .coinciding
        .iter()
        .map(|f| {
            let owner = f.lower.min(f.upper);
            let edge_species = if mesh.fraction(owner, Species::A) == 0.0 { Species::A } else { Species::B };
            (*f, CoincidingOwner { owner, edge_species })
        })
        .collect();
    mesh
}

/// Empty phase cells that the coinciding rule turns into agglomeration sources.
pub fn detect_coinciding_fractions(mesh: &CutCellMesh) -> BTreeSet<(CellIndex, Species)> {
    mesh.owners
        .iter()
        .filter(|(f, o)| {
            let other = if o.owner == f.lower { f.upper } else { f.lower };
            mesh.fraction(o.owner, o.edge_species) == 0.0 && mesh.fraction(other, o.edge_species) == 1.0
        })
        .map(|(_, o)| (o.owner, o.edge_species))
        .collect()
}
