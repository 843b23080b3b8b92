//! Condition numbers of (agglomerated) mass matrices and per-step statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::aggmap::SpeciesMap;
use crate::algebra::BlockMatrix;
use crate::cutcell::{CutCellMesh, Species};
use crate::error::{Error, Result};
use crate::grid::CellIndex;
use crate::parallel::map_range;

/// Smallest singular value still treated as nonzero.
pub const SINGULAR_FLOOR: f64 = 1e-300;
pub const DEFAULT_DENSE_LIMIT: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Kappa {
    Finite(f64),
    Infinite,
}

impl Kappa {
    pub fn value(&self) -> f64 {
        match self {
            Kappa::Finite(v) => *v,
            Kappa::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Kappa::Infinite)
    }

    fn from_extremes(smax: f64, smin: f64) -> Kappa {
        if smin < SINGULAR_FLOOR || !smax.is_finite() {
            Kappa::Infinite
        } else {
            Kappa::Finite(smax / smin)
        }
    }
}

fn singular_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let s = m.singular_values();
    (s.max(), s.min())
}

/// 2-norm condition number of a dense stencil matrix.
pub fn stencil_condition(m: &DMatrix<f64>) -> Result<Kappa> {
    if m.is_empty() {
        return Err(Error::EmptyStencil);
    }
    let (smax, smin) = singular_extremes(m);
    Ok(Kappa::from_extremes(smax, smin))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GlobalKappa {
    Value(Kappa),
    TooLarge { dimension: usize, limit: usize },
}

/// Condition number of a whole matrix. Block-diagonal matrices are handled
/// block by block and are not subject to `dense_limit`.
pub fn global_condition(m: &BlockMatrix, dense_limit: usize) -> Result<GlobalKappa> {
    if m.nrows() == 0 {
        return Err(Error::EmptyStencil);
    }
    if m.is_block_diagonal() {
        let blocks: Vec<&DMatrix<f64>> = m.iter().map(|(_, _, b)| b).collect();
        if blocks.len() < m.rows().len() {
            return Ok(GlobalKappa::Value(Kappa::Infinite));
        }
        let ext = map_range(blocks.len(), |i| singular_extremes(blocks[i]));
        let smax = ext.iter().map(|e| e.0).fold(0.0, f64::max);
        let smin = ext.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        return Ok(GlobalKappa::Value(Kappa::from_extremes(smax, smin)));
    }
    if m.nrows() > dense_limit {
        return Ok(GlobalKappa::TooLarge { dimension: m.nrows(), limit: dense_limit });
    }
    Ok(GlobalKappa::Value(stencil_condition(&m.to_dense())?))
}

/// Dense principal submatrix over the given block cells.
pub fn stencil_submatrix(m: &BlockMatrix, cells: &[CellIndex]) -> DMatrix<f64> {
    let b = m.block_size();
    let n = cells.len() * b;
    let mut out = DMatrix::zeros(n, n);
    for (i, ci) in cells.iter().enumerate() {
        for (j, cj) in cells.iter().enumerate() {
            if let Some(blk) = m.get(*ci, *cj) {
                out.view_mut((i * b, j * b), (b, b)).copy_from(blk);
            }
        }
    }
    out
}

/// Agglomerated cell of every phase cell.
fn roots_of(map: &SpeciesMap) -> BTreeMap<CellIndex, CellIndex> {
    map.universe.iter().map(|c| (*c, map.final_target(*c).unwrap_or(*c))).collect()
}

/// Stencil of the agglomerated cell holding `cell`: that cell and every
/// agglomerated cell sharing a face with one of its members.
pub fn agglomerated_stencil(mesh: &CutCellMesh, map: &SpeciesMap, cell: CellIndex) -> Vec<CellIndex> {
    let roots = roots_of(map);
    stencil_with_roots(mesh, map, &roots, &members_by_root(&roots), cell)
}

fn members_by_root(roots: &BTreeMap<CellIndex, CellIndex>) -> BTreeMap<CellIndex, Vec<CellIndex>> {
    let mut members: BTreeMap<CellIndex, Vec<CellIndex>> = BTreeMap::new();
    for (c, r) in roots {
        members.entry(*r).or_default().push(*c);
    }
    members
}

fn stencil_with_roots(
    mesh: &CutCellMesh,
    map: &SpeciesMap,
    roots: &BTreeMap<CellIndex, CellIndex>,
    members: &BTreeMap<CellIndex, Vec<CellIndex>>,
    cell: CellIndex,
) -> Vec<CellIndex> {
    let root = roots.get(&cell).copied().unwrap_or(cell);
    let mut out = BTreeSet::from([root]);
    for m in members.get(&root).into_iter().flatten() {
        for n in mesh.grid().neighbors_unchecked(*m) {
            if map.universe.contains(&n) {
                out.insert(roots[&n]);
            }
        }
    }
    out.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub species: Species,
    pub alpha: f64,
    pub degree: usize,
    pub n_cut: usize,
    pub n_src: usize,
    pub pct_agg: f64,
    pub min_frac: Option<f64>,
    pub max_kappa_s: Option<f64>,
    pub kappa_g: Option<Kappa>,
    pub inf_count: usize,
}

/// Statistics of one species at one step. `agg_mass` is `Q^T M Q` for the
/// species' map; stencils are taken around every cut cell.
pub fn collect_step_metrics(
    step: usize,
    alpha: f64,
    degree: usize,
    mesh: &CutCellMesh,
    map: &SpeciesMap,
    agg_mass: &BlockMatrix,
    dense_limit: usize,
) -> Result<StepMetrics> {
    let species = map.species;
    let cut: Vec<CellIndex> = mesh.cut_cells().collect();
    let n_src_cut = cut.iter().filter(|c| map.sources.contains(**c)).count();
    let pct_agg = if cut.is_empty() { 0.0 } else { 100.0 * n_src_cut as f64 / cut.len() as f64 };
    let min_frac = cut.iter().map(|c| mesh.fraction(*c, species)).reduce(f64::min);

    let roots = roots_of(map);
    let members = members_by_root(&roots);
    let stencil_roots: BTreeSet<CellIndex> = cut.iter().filter_map(|c| roots.get(c).copied()).collect();
    let stencil_roots: Vec<CellIndex> = stencil_roots.into_iter().collect();
    let kappas = map_range(stencil_roots.len(), |i| {
        let cells = stencil_with_roots(mesh, map, &roots, &members, stencil_roots[i]);
        stencil_condition(&stencil_submatrix(agg_mass, &cells))
    });
    let mut max_kappa_s: Option<f64> = None;
    let mut inf_count = 0;
    for k in kappas {
        match k? {
            Kappa::Infinite => inf_count += 1,
            Kappa::Finite(v) => max_kappa_s = Some(max_kappa_s.map_or(v, |m| m.max(v))),
        }
    }
    let kappa_g = if agg_mass.nrows() == 0 {
        None
    } else {
        match global_condition(agg_mass, dense_limit)? {
            GlobalKappa::Value(k) => Some(k),
            GlobalKappa::TooLarge { .. } => None,
        }
    };
    Ok(StepMetrics {
        step,
        species,
        alpha,
        degree,
        n_cut: cut.len(),
        n_src: map.sources.all.len(),
        pct_agg,
        min_frac,
        max_kappa_s,
        kappa_g,
        inf_count,
    })
}

pub const CSV_HEADER: [&str; 11] =
    ["step", "species", "alpha", "degree", "n_cut", "n_src", "pct_agg", "min_frac", "max_kappa_s", "kappa_g", "inf_count"];

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f64)
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[StepMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.species.to_string(),
            fmt_f64(r.alpha),
            r.degree.to_string(),
            r.n_cut.to_string(),
            r.n_src.to_string(),
            fmt_f64(r.pct_agg),
            fmt_opt(r.min_frac),
            fmt_opt(r.max_kappa_s),
            fmt_opt(r.kappa_g.map(|k| k.value())),
            r.inf_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    match s {
        "NA" => Ok(None),
        "inf" => Ok(Some(f64::INFINITY)),
        other => other.parse().map(Some).map_err(|_| Error::Schema(format!("not a number: '{other}'"))),
    }
}

fn parse_int(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Schema(format!("not an integer: '{s}'")))
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<StepMetrics>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Schema(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Schema(format!("row with {} fields", rec.len())));
        }
        let species = match &rec[1] {
            "A" => Species::A,
            "B" => Species::B,
            s => return Err(Error::Schema(format!("unknown species '{s}'"))),
        };
        let need = |s: &str| parse_opt(s)?.ok_or_else(|| Error::Schema("missing value".into()));
        rows.push(StepMetrics {
            step: parse_int(&rec[0])?,
            species,
            alpha: need(&rec[2])?,
            degree: parse_int(&rec[3])?,
            n_cut: parse_int(&rec[4])?,
            n_src: parse_int(&rec[5])?,
            pct_agg: need(&rec[6])?,
            min_frac: parse_opt(&rec[7])?,
            max_kappa_s: parse_opt(&rec[8])?,
            kappa_g: parse_opt(&rec[9])?.map(|v| if v.is_infinite() { Kappa::Infinite } else { Kappa::Finite(v) }),
            inf_count: parse_int(&rec[10])?,
        });
    }
    Ok(rows)
}
