//! Orthonormal tensor Legendre bases, cut-cell mass matrices, coupling
//! matrices and the injection operator `Q` with `phi_agg = phi Q`.
//!
//! Bases are orthonormal over the full background cell, so a full cell has
//! the identity as mass matrix and a small cut cell a nearly singular one.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::aggmap::SpeciesMap;
use crate::cutcell::{decompose_cell, CutCellMesh, Species, SubRegion};
use crate::error::{Error, Result};
use crate::grid::{CartesianGrid, CellBox, CellIndex};
use crate::parallel::map_range;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// `sqrt(2k+1) P_k(2 xi - 1)` for `k = 0..=p`.
pub fn legendre_values(p: usize, xi: f64, out: &mut [f64]) {
    let x = 2.0 * xi - 1.0;
    let (mut p0, mut p1) = (1.0, x);
    out[0] = 1.0;
    if p >= 1 {
        out[1] = 3f64.sqrt() * x;
    }
    for k in 2..=p {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        out[k] = ((2 * k + 1) as f64).sqrt() * p2;
        p0 = p1;
        p1 = p2;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellBasis {
    dim: usize,
    degree: usize,
    modes: Vec<[usize; 3]>,
}

/// Tensor modes with per-axis degree at most `p`, by total degree and then
/// lexicographically.
pub fn tensor_basis(dim: usize, p: usize) -> CellBasis {
    assert!((1..=3).contains(&dim));
    let mut modes = Vec::new();
    let n = p + 1;
    for k in 0..n.pow(dim as u32) {
        let mut m = [0usize; 3];
        let mut rest = k;
        for slot in m.iter_mut().take(dim) {
            *slot = rest % n;
            rest /= n;
        }
        modes.push(m);
    }
    modes.sort_by_key(|m| (m.iter().sum::<usize>(), *m));
    CellBasis { dim, degree: p, modes }
}

impl CellBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[[usize; 3]] {
        &self.modes
    }

    /// Values of all modes at a reference point.
    pub fn eval_all(&self, xi: &[f64], out: &mut [f64]) {
        let mut tab = [[0.0; 8]; 3];
        assert!(self.degree < 8);
        for a in 0..self.dim {
            legendre_values(self.degree, xi[a], &mut tab[a]);
        }
        for (o, m) in out.iter_mut().zip(&self.modes) {
            *o = (0..self.dim).map(|a| tab[a][m[a]]).product();
        }
    }

    pub fn eval(&self, mode: usize, xi: &[f64]) -> f64 {
        let mut v = vec![0.0; self.len()];
        self.eval_all(xi, &mut v);
        v[mode]
    }

    /// Tensor mass from per-axis 1D Gram matrices.
    fn tensor_from_1d(&self, axes: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.len();
        DMatrix::from_fn(m, m, |i, j| {
            let (a, b) = (self.modes[i], self.modes[j]);
            (0..self.dim).map(|ax| axes[ax][(a[ax], b[ax])]).product()
        })
    }
}

/// `int_lo^{lo+len} L_i(x) L_j(x + shift) dx` for all `i, j <= p`.
fn gram_1d(p: usize, lo: f64, len: f64, shift: f64, scale: f64) -> DMatrix<f64> {
    let (nodes, weights) = gauss_legendre(p + 1);
    let mut g = DMatrix::zeros(p + 1, p + 1);
    let mut u = vec![0.0; p + 1];
    let mut v = vec![0.0; p + 1];
    for (x, w) in nodes.iter().zip(&weights) {
        let xi = lo + len * x;
        legendre_values(p, xi, &mut u);
        legendre_values(p, (xi + shift) * scale, &mut v);
        for i in 0..=p {
            for j in 0..=p {
                g[(i, j)] += w * len * u[i] * v[j];
            }
        }
    }
    g
}

/// Mass matrix of the reference sub-box `[lo, lo + side]^dim`.
fn subbox_mass(basis: &CellBasis, lo: &[f64; 3], side: f64) -> DMatrix<f64> {
    let axes: Vec<DMatrix<f64>> = (0..basis.dim).map(|a| gram_1d(basis.degree, lo[a], side, 0.0, 1.0)).collect();
    basis.tensor_from_1d(&axes)
}

/// Mass matrix over an axis-aligned part of the reference cell.
pub fn region_mass_matrix(basis: &CellBasis, lo: &[f64], hi: &[f64]) -> DMatrix<f64> {
    let axes: Vec<DMatrix<f64>> =
        (0..basis.dim).map(|a| gram_1d(basis.degree, lo[a], hi[a] - lo[a], 0.0, 1.0)).collect();
    basis.tensor_from_1d(&axes)
}

/// Mass matrices of both phases of `cell`, in reference normalization.
///
/// Meshes built from bare fractions have no level set; their cut cells are
/// modeled as the slab `xi_0 < frac_A` for species A.
pub fn cell_mass_matrices(mesh: &CutCellMesh, basis: &CellBasis, cell: CellIndex) -> Result<[DMatrix<f64>; 2]> {
    let m = basis.len();
    let fa = mesh.fraction(cell, Species::A);
    if !mesh.is_cut(cell) {
        let full = DMatrix::identity(m, m);
        let empty = DMatrix::zeros(m, m);
        return Ok(if fa == 1.0 { [full, empty] } else { [empty, full] });
    }
    let dim = basis.dim;
    let Some(field) = mesh.field() else {
        let mut hi = [1.0; 3];
        hi[0] = fa;
        let a = region_mass_matrix(basis, &[0.0; 3], &hi);
        let b = DMatrix::identity(m, m) - &a;
        return Ok([a, b]);
    };
    let mut mats = [DMatrix::zeros(m, m), DMatrix::zeros(m, m)];
    let probe_weight_base = 1.0 / 3f64.powi(dim as i32);
    let mut vals = vec![0.0; m];
    decompose_cell(field, mesh.grid().cell_box(cell), mesh.time(), mesh.rule(), |r| match r {
        SubRegion::Pure { lo, side, species } => {
            mats[species.index()] += subbox_mass(basis, &lo, side);
        }
        SubRegion::Mixed { side, probes, .. } => {
            let w = side.powi(dim as i32) * probe_weight_base;
            for (xi, species) in probes {
                basis.eval_all(xi, &mut vals);
                let target = &mut mats[species.index()];
                for i in 0..m {
                    for j in 0..m {
                        target[(i, j)] += w * vals[i] * vals[j];
                    }
                }
            }
        }
    })?;
    for mat in &mut mats {
        let sym = (&*mat + mat.transpose()) * 0.5;
        *mat = sym;
    }
    Ok(mats)
}

pub fn phase_mass_matrix(mesh: &CutCellMesh, basis: &CellBasis, cell: CellIndex, species: Species) -> Result<DMatrix<f64>> {
    let [a, b] = cell_mass_matrices(mesh, basis, cell)?;
    Ok(match species {
        Species::A => a,
        Species::B => b,
    })
}

/// Coefficients of the target modes, extended as polynomials, in the source
/// basis: `Q[m][n] = int_{K_src} phi_{src,m} phi_{tgt,n} dV`.
pub fn coupling_matrix_boxes(basis: &CellBasis, src: &CellBox, tgt: &CellBox) -> DMatrix<f64> {
    let dim = basis.dim;
    let axes: Vec<DMatrix<f64>> = (0..dim)
        .map(|a| {
            // xi_t = (lo_s + h_s xi_s - lo_t) / h_t
            let scale = src.size[a] / tgt.size[a];
            let shift = (src.lo[a] - tgt.lo[a]) / src.size[a];
            gram_1d(basis.degree, 0.0, 1.0, shift, scale) * (src.size[a] / tgt.size[a]).sqrt()
        })
        .collect();
    basis.tensor_from_1d(&axes)
}

pub fn coupling_matrix(basis: &CellBasis, grid: &CartesianGrid, src: CellIndex, tgt: CellIndex) -> DMatrix<f64> {
    if src == tgt {
        return DMatrix::identity(basis.len(), basis.len());
    }
    coupling_matrix_boxes(basis, &grid.cell_box(src), &grid.cell_box(tgt))
}

/// Sparse matrix of dense `M x M` blocks addressed by cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    block: usize,
    rows: Vec<CellIndex>,
    cols: Vec<CellIndex>,
    row_pos: BTreeMap<CellIndex, usize>,
    col_pos: BTreeMap<CellIndex, usize>,
    blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl BlockMatrix {
    pub fn new(block: usize, rows: Vec<CellIndex>, cols: Vec<CellIndex>) -> Self {
        let row_pos = rows.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let col_pos = cols.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        BlockMatrix { block, rows, cols, row_pos, col_pos, blocks: BTreeMap::new() }
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn rows(&self) -> &[CellIndex] {
        &self.rows
    }

    pub fn cols(&self) -> &[CellIndex] {
        &self.cols
    }

    pub fn nrows(&self) -> usize {
        self.rows.len() * self.block
    }

    pub fn ncols(&self) -> usize {
        self.cols.len() * self.block
    }

    pub fn row_position(&self, cell: CellIndex) -> Option<usize> {
        self.row_pos.get(&cell).copied()
    }

    pub fn col_position(&self, cell: CellIndex) -> Option<usize> {
        self.col_pos.get(&cell).copied()
    }

    pub fn get(&self, row: CellIndex, col: CellIndex) -> Option<&DMatrix<f64>> {
        let key = (self.row_pos.get(&row)?.to_owned(), self.col_pos.get(&col)?.to_owned());
        self.blocks.get(&key)
    }

    /// Adds `m` to block `(row, col)`.
    pub fn add(&mut self, row: CellIndex, col: CellIndex, m: &DMatrix<f64>) -> Result<()> {
        let r = *self.row_pos.get(&row).ok_or_else(|| Error::DimensionMismatch(format!("no block row {row}")))?;
        let c = *self.col_pos.get(&col).ok_or_else(|| Error::DimensionMismatch(format!("no block column {col}")))?;
        if m.nrows() != self.block || m.ncols() != self.block {
            return Err(Error::DimensionMismatch(format!("{}x{} block for size {}", m.nrows(), m.ncols(), self.block)));
        }
        match self.blocks.get_mut(&(r, c)) {
            Some(b) => *b += m,
            None => {
                self.blocks.insert((r, c), m.clone());
            }
        }
        Ok(())
    }

    /// Nonzero blocks as `(row cell, col cell, block)`.
    pub fn iter(&self) -> impl Iterator<Item = (CellIndex, CellIndex, &DMatrix<f64>)> {
        self.blocks.iter().map(|((r, c), b)| (self.rows[*r], self.cols[*c], b))
    }

    pub fn blocks_in_col(&self, col: CellIndex) -> Vec<(CellIndex, &DMatrix<f64>)> {
        let Some(&c) = self.col_pos.get(&col) else { return Vec::new() };
        self.blocks.iter().filter(|((_, cc), _)| *cc == c).map(|((r, _), b)| (self.rows[*r], b)).collect()
    }

    pub fn is_block_diagonal(&self) -> bool {
        self.rows == self.cols && self.blocks.keys().all(|(r, c)| r == c)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let b = self.block;
        let mut d = DMatrix::zeros(self.nrows(), self.ncols());
        for ((r, c), m) in &self.blocks {
            d.view_mut((r * b, c * b), (b, b)).copy_from(m);
        }
        d
    }

    pub fn transpose(&self) -> BlockMatrix {
        let mut t = BlockMatrix::new(self.block, self.cols.clone(), self.rows.clone());
        t.blocks = self.blocks.iter().map(|((r, c), m)| ((*c, *r), m.transpose())).collect();
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols() {
            return Err(Error::DimensionMismatch(format!("vector of {} for {} columns", x.len(), self.ncols())));
        }
        let b = self.block;
        let mut y = vec![0.0; self.nrows()];
        for ((r, c), m) in &self.blocks {
            let xs = DVector::from_column_slice(&x[c * b..(c + 1) * b]);
            let ys = m * xs;
            for i in 0..b {
                y[r * b + i] += ys[i];
            }
        }
        Ok(y)
    }

    /// Largest entry of `A - A^T` in magnitude.
    pub fn asymmetry(&self) -> f64 {
        let d = self.to_dense();
        if d.nrows() != d.ncols() {
            return f64::INFINITY;
        }
        (&d - d.transpose()).amax()
    }

    /// Coordinate format: one `row col value` line per nonzero entry.
    pub fn to_coordinate_text(&self) -> String {
        let b = self.block;
        let mut s = String::new();
        for ((r, c), m) in &self.blocks {
            for i in 0..b {
                for j in 0..b {
                    let v = m[(i, j)];
                    if v != 0.0 {
                        s.push_str(&format!("{} {} {:.16e}\n", r * b + i, c * b + j, v));
                    }
                }
            }
        }
        s
    }
}

/// Block-diagonal mass matrix over the phase cells of one species.
pub fn species_mass_matrix(mesh: &CutCellMesh, basis: &CellBasis, map: &SpeciesMap) -> Result<BlockMatrix> {
    let cells: Vec<CellIndex> = map.universe.iter().copied().collect();
    let blocks = map_range(cells.len(), |i| phase_mass_matrix(mesh, basis, cells[i], map.species));
    let mut mm = BlockMatrix::new(basis.len(), cells.clone(), cells.clone());
    for (c, b) in cells.iter().zip(blocks) {
        mm.add(*c, *c, &b?)?;
    }
    Ok(mm)
}

/// Injection operator of one species: rows are phase cells, columns the
/// cells of the agglomerated mesh. Pairs are merged in ascending level
/// order, so a target's accumulated group is carried over when it is itself
/// agglomerated.
pub fn assemble_injection(map: &SpeciesMap, basis: &CellBasis, grid: &CartesianGrid) -> Result<BlockMatrix> {
    let m = basis.len();
    let rows: Vec<CellIndex> = map.universe.iter().copied().collect();
    let mut merged: BTreeMap<CellIndex, Vec<(CellIndex, DMatrix<f64>)>> =
        rows.iter().map(|c| (*c, vec![(*c, DMatrix::identity(m, m))])).collect();
    let mut order: Vec<_> = map.pairs.iter().collect();
    order.sort_by_key(|p| (p.level, p.source));
    for p in order {
        let members = merged
            .remove(&p.source)
            .ok_or_else(|| Error::InvalidMap(format!("source {} merged twice or unknown", p.source)))?;
        if !merged.contains_key(&p.target) {
            return Err(Error::InvalidMap(format!(
                "target {} of {} is not an open cell at level {}",
                p.target, p.source, p.level
            )));
        }
        let q = coupling_matrix(basis, grid, p.source, p.target);
        let moved: Vec<(CellIndex, DMatrix<f64>)> = members.into_iter().map(|(c, b)| (c, b * &q)).collect();
        merged.get_mut(&p.target).expect("checked above").extend(moved);
    }
    let cols: Vec<CellIndex> = merged.keys().copied().collect();
    let mut q = BlockMatrix::new(m, rows, cols);
    for (col, members) in merged {
        for (row, b) in members {
            q.add(row, col, &b)?;
        }
    }
    Ok(q)
}

/// `Q^T A Q`.
pub fn agglomerate_matrix(a: &BlockMatrix, q: &BlockMatrix) -> Result<BlockMatrix> {
    if a.block != q.block || a.rows != q.rows || a.cols != q.rows {
        return Err(Error::DimensionMismatch(format!(
            "operator with {}x{} blocks against injection with {} rows",
            a.rows.len(),
            a.cols.len(),
            q.rows.len()
        )));
    }
    let mut by_row: BTreeMap<usize, Vec<(usize, &DMatrix<f64>)>> = BTreeMap::new();
    for ((r, c), b) in &q.blocks {
        by_row.entry(*r).or_default().push((*c, b));
    }
    let mut out = BlockMatrix::new(q.block, q.cols.clone(), q.cols.clone());
    let mut acc: BTreeMap<(usize, usize), DMatrix<f64>> = BTreeMap::new();
    for ((i, j), aij) in &a.blocks {
        let (Some(qi), Some(qj)) = (by_row.get(i), by_row.get(j)) else { continue };
        for (g, qig) in qi {
            let left = qig.transpose() * aij;
            for (h, qjh) in qj {
                let contrib = &left * *qjh;
                match acc.get_mut(&(*g, *h)) {
                    Some(x) => *x += contrib,
                    None => {
                        acc.insert((*g, *h), contrib);
                    }
                }
            }
        }
    }
    out.blocks = acc;
    Ok(out)
}

/// Moves coefficients between the original and the agglomerated space.
/// `restrict` is the L2 projection in the metric of the mass matrix.
pub struct Projector {
    q: BlockMatrix,
    qt_m: BlockMatrix,
    factors: Vec<Cholesky<f64, Dyn>>,
}

impl Projector {
    pub fn new(q: &BlockMatrix, mass: &BlockMatrix) -> Result<Self> {
        let agg = agglomerate_matrix(mass, q)?;
        if !agg.is_block_diagonal() {
            return Err(Error::InvalidMap("agglomerated mass matrix is not block diagonal".into()));
        }
        let m = q.block;
        let mut factors = Vec::with_capacity(agg.cols.len());
        for (k, col) in agg.cols.iter().enumerate() {
            let block = agg.blocks.get(&(k, k)).cloned().unwrap_or_else(|| DMatrix::zeros(m, m));
            factors.push(Cholesky::new(block).ok_or(Error::SingularBlock(*col))?);
        }
        let mut qt_m = BlockMatrix::new(m, q.cols.clone(), q.rows.clone());
        for ((r, c), qb) in &q.blocks {
            let mb = mass.blocks.get(&(*r, *r)).cloned().unwrap_or_else(|| DMatrix::zeros(m, m));
            qt_m.blocks.insert((*c, *r), qb.transpose() * mb);
        }
        Ok(Projector { q: q.clone(), qt_m, factors })
    }

    pub fn injection(&self) -> &BlockMatrix {
        &self.q
    }

    pub fn inject(&self, agg: &[f64]) -> Result<Vec<f64>> {
        self.q.mul_vec(agg)
    }

    pub fn restrict(&self, orig: &[f64]) -> Result<Vec<f64>> {
        let rhs = self.qt_m.mul_vec(orig)?;
        let m = self.q.block;
        let mut out = vec![0.0; rhs.len()];
        for (k, f) in self.factors.iter().enumerate() {
            let x = f.solve(&DVector::from_column_slice(&rhs[k * m..(k + 1) * m]));
            out[k * m..(k + 1) * m].copy_from_slice(x.as_slice());
        }
        Ok(out)
    }
}

pub fn inject(p: &Projector, agg: &[f64]) -> Result<Vec<f64>> {
    p.inject(agg)
}

pub fn restrict(p: &Projector, orig: &[f64]) -> Result<Vec<f64>> {
    p.restrict(orig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggmap::{AggPair, PairKind, SourceSets};
    use crate::geometry::{axis_plane, sphere};
    use crate::cutcell::{build_cutcell_mesh, QuadratureRule};

    fn line_box(lo: f64) -> CellBox {
        CellBox::new(1, &[lo], &[1.0])
    }

    fn gram(basis: &CellBasis, order: usize) -> DMatrix<f64> {
        let (x, w) = gauss_legendre(order);
        let m = basis.len();
        let mut g = DMatrix::zeros(m, m);
        let mut v = vec![0.0; m];
        let n = x.len();
        for k in 0..n.pow(basis.dim() as u32) {
            let mut xi = [0.0; 3];
            let mut wt = 1.0;
            let mut rest = k;
            for a in 0..basis.dim() {
                xi[a] = x[rest % n];
                wt *= w[rest % n];
                rest /= n;
            }
            basis.eval_all(&xi, &mut v);
            g += DMatrix::from_fn(m, m, |i, j| wt * v[i] * v[j]);
        }
        g
    }

    #[test]
    fn gauss_rules_integrate_monomials() {
        for n in 1..7 {
            let (x, w) = gauss_legendre(n);
            for k in 0..2 * n {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                assert!((s - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn basis_shapes_and_orthonormality() {
        let b1 = tensor_basis(1, 1);
        assert_eq!(b1.len(), 2);
        assert!((b1.eval(0, &[0.3]) - 1.0).abs() < 1e-15);
        assert!((b1.eval(1, &[0.3]) - 3f64.sqrt() * (2.0 * 0.3 - 1.0)).abs() < 1e-15);
        assert_eq!(tensor_basis(2, 1).len(), 4);
        assert_eq!(tensor_basis(3, 2).len(), 27);
        assert_eq!(tensor_basis(2, 1).modes(), &[[0, 0, 0], [0, 1, 0], [1, 0, 0], [1, 1, 0]]);
        for (dim, p) in [(1, 3), (2, 2), (3, 1), (2, 3)] {
            let b = tensor_basis(dim, p);
            let g = gram(&b, 2 * p + 1);
            assert!((g - DMatrix::identity(b.len(), b.len())).amax() < 1e-12);
        }
    }

    #[test]
    fn slab_mass_matches_closed_form() {
        let b = tensor_basis(1, 1);
        for f in [0.1, 0.5, 0.93] {
            let m = region_mass_matrix(&b, &[0.0], &[f]);
            let s3 = 3f64.sqrt();
            let expect = DMatrix::from_row_slice(2, 2, &[f, s3 * f * (f - 1.0), s3 * f * (f - 1.0), ((2.0 * f - 1.0).powi(3) + 1.0) / 2.0]);
            assert!((m - expect).amax() < 1e-14);
        }
        // numeric check at f = 0.5 with a fine midpoint rule
        let n = 20000;
        let mut num = DMatrix::zeros(2, 2);
        let mut v = [0.0; 2];
        for k in 0..n {
            let x = 0.5 * (k as f64 + 0.5) / n as f64;
            b.eval_all(&[x], &mut v);
            num += DMatrix::from_fn(2, 2, |i, j| 0.5 / n as f64 * v[i] * v[j]);
        }
        assert!((num - region_mass_matrix(&b, &[0.0], &[0.5])).amax() < 1e-8);
    }

    #[test]
    fn cut_mass_matrices_partition_the_identity() {
        let g = CartesianGrid::new(2, &[4, 4], &[-1.0, -1.0], &[2.0, 2.0]).unwrap();
        let mesh = build_cutcell_mesh(&g, &sphere(2, [0.1, 0.0, 0.0], 0.63), 0.0, &QuadratureRule { max_depth: 5, gauss_order: 2 }, 1e-12).unwrap();
        let b = tensor_basis(2, 1);
        for c in g.cells() {
            let [ma, mb] = cell_mass_matrices(&mesh, &b, c).unwrap();
            assert!((&ma - ma.transpose()).amax() <= 1e-12);
            assert!((ma[(0, 0)] - mesh.fraction(c, Species::A)).abs() < 1e-12);
            assert!((&ma + &mb - DMatrix::identity(4, 4)).amax() < 1e-2);
            assert!(ma.symmetric_eigenvalues().min() > -1e-12);
        }
        let plane = build_cutcell_mesh(&g, &axis_plane(2, 0, 0.0), 0.0, &QuadratureRule::default(), 1e-12).unwrap();
        let [ma, mb] = cell_mass_matrices(&plane, &b, CellIndex(0)).unwrap();
        assert_eq!(ma, DMatrix::identity(4, 4));
        assert_eq!(mb, DMatrix::zeros(4, 4));
    }

    #[test]
    fn coupling_identities() {
        let b = tensor_basis(2, 1);
        let g = CartesianGrid::new(2, &[3, 3], &[0.0, 0.0], &[3.0, 3.0]).unwrap();
        assert_eq!(coupling_matrix(&b, &g, CellIndex(4), CellIndex(4)), DMatrix::identity(4, 4));
        let b0 = tensor_basis(2, 0);
        let q = coupling_matrix(&b0, &g, CellIndex(3), CellIndex(4));
        assert!((q[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn coupling_extends_linear_mode() {
        let b = tensor_basis(1, 1);
        let q = coupling_matrix_boxes(&b, &line_box(0.0), &line_box(1.0));
        // target mode sqrt3 (2 xi_t - 1) with xi_t = xi_s - 1
        for k in 0..5 {
            let xs = k as f64 / 4.0;
            let exact = 3f64.sqrt() * (2.0 * (xs - 1.0) - 1.0);
            let approx = q[(0, 1)] * b.eval(0, &[xs]) + q[(1, 1)] * b.eval(1, &[xs]);
            assert!((exact - approx).abs() < 1e-13);
        }
    }

    #[test]
    fn chain_composition_matches_direct_coupling() {
        for p in 0..4 {
            let b = tensor_basis(1, p);
            let (k1, k2, k3) = (line_box(0.0), line_box(1.0), line_box(2.0));
            let q13 = coupling_matrix_boxes(&b, &k1, &k3);
            let q12 = coupling_matrix_boxes(&b, &k1, &k2);
            let q23 = coupling_matrix_boxes(&b, &k2, &k3);
            let err = (&q13 - q12 * q23).amax();
            // entries grow like the extension distance to the power p
            assert!(err <= 1e-12 * q13.amax().max(1.0), "p={p}: {err:e}");
            if p <= 2 {
                assert!(err <= 1e-12);
            }
        }
    }

    fn strip_map(pairs: &[(usize, usize, u32)], n: usize) -> SpeciesMap {
        let mut m = SpeciesMap::empty(Species::A);
        m.universe = (0..n).map(CellIndex).collect();
        m.pairs = pairs
            .iter()
            .map(|(s, t, l)| AggPair { source: CellIndex(*s), target: CellIndex(*t), species: Species::A, level: *l, kind: PairKind::Chain })
            .collect();
        m.sources = SourceSets { all: m.pairs.iter().map(|p| p.source).collect(), ..SourceSets::default() };
        m
    }

    #[test]
    fn injection_structure() {
        let g = CartesianGrid::new(2, &[3, 1], &[0.0, 0.0], &[3.0, 1.0]).unwrap();
        let b = tensor_basis(2, 1);
        let empty = assemble_injection(&strip_map(&[], 3), &b, &g).unwrap();
        assert_eq!(empty.to_dense(), DMatrix::identity(12, 12));
        // example with K0 -> K1 and K2 -> K1
        let q = assemble_injection(&strip_map(&[(0, 1, 0), (2, 1, 0)], 3), &b, &g).unwrap();
        assert_eq!(q.cols(), &[CellIndex(1)]);
        assert_eq!(q.get(CellIndex(1), CellIndex(1)).unwrap(), &DMatrix::identity(4, 4));
        assert_eq!(q.get(CellIndex(0), CellIndex(1)).unwrap(), &coupling_matrix(&b, &g, CellIndex(0), CellIndex(1)));
        // level-reduced chain versus the sequential one
        let direct = assemble_injection(&strip_map(&[(0, 2, 0), (1, 2, 0)], 3), &b, &g).unwrap();
        let seq = assemble_injection(&strip_map(&[(0, 1, 0), (1, 2, 1)], 3), &b, &g).unwrap();
        assert!((direct.to_dense() - seq.to_dense()).amax() < 1e-12);
        // out-of-order levels are rejected
        assert!(assemble_injection(&strip_map(&[(0, 1, 1), (1, 2, 0)], 3), &b, &g).is_err());
    }

    #[test]
    fn agglomerated_mass_of_union_and_round_trip() {
        let g = CartesianGrid::new(2, &[3, 1], &[0.0, 0.0], &[3.0, 1.0]).unwrap();
        let mesh = CutCellMesh::from_fractions(&g, 0.0, vec![0.05, 1.0, 0.02]).unwrap();
        let b = tensor_basis(2, 1);
        let map = strip_map(&[(0, 1, 0), (2, 1, 0)], 3);
        let q = assemble_injection(&map, &b, &g).unwrap();
        let mm = species_mass_matrix(&mesh, &b, &map).unwrap();
        assert!(mm.asymmetry() <= 1e-12);
        let agg = agglomerate_matrix(&mm, &q).unwrap();
        assert_eq!(agg.cols().len(), 1);
        // union region in the reference coordinates of cell 1
        let expect = region_mass_matrix(&b, &[-1.0, 0.0], &[-0.95, 1.0]) + region_mass_matrix(&b, &[0.0, 0.0], &[1.02, 1.0]);
        assert!((agg.get(CellIndex(1), CellIndex(1)).unwrap() - expect).amax() < 1e-12);
        let p = Projector::new(&q, &mm).unwrap();
        let v = vec![0.3, -1.2, 0.7, 2.0];
        let back = p.restrict(&p.inject(&v).unwrap()).unwrap();
        for (x, y) in v.iter().zip(back) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(agglomerate_matrix(&mm, &BlockMatrix::new(4, vec![CellIndex(0)], vec![CellIndex(0)])).is_err());
    }

    #[test]
    fn identity_injection_leaves_matrix() {
        let g = CartesianGrid::new(2, &[2, 1], &[0.0, 0.0], &[2.0, 1.0]).unwrap();
        let mesh = CutCellMesh::from_fractions(&g, 0.0, vec![0.4, 0.7]).unwrap();
        let b = tensor_basis(2, 1);
        let map = strip_map(&[], 2);
        let q = assemble_injection(&map, &b, &g).unwrap();
        let mm = species_mass_matrix(&mesh, &b, &map).unwrap();
        assert_eq!(agglomerate_matrix(&mm, &q).unwrap().to_dense(), mm.to_dense());
        assert!(mm.to_coordinate_text().lines().count() > 0);
    }

    #[test]
    fn empty_source_becomes_regular() {
        let g = CartesianGrid::new(2, &[2, 1], &[0.0, 0.0], &[2.0, 1.0]).unwrap();
        let mesh = build_cutcell_mesh(&g, &axis_plane(2, 0, 1.0), 0.0, &QuadratureRule::default(), 1e-12).unwrap();
        let b = tensor_basis(2, 1);
        let mut map = strip_map(&[(0, 1, 0)], 2);
        map.species = Species::B;
        for p in &mut map.pairs {
            p.species = Species::B;
        }
        let q = assemble_injection(&map, &b, &g).unwrap();
        let mm = species_mass_matrix(&mesh, &b, &map).unwrap();
        assert_eq!(mm.get(CellIndex(0), CellIndex(0)).unwrap(), &DMatrix::zeros(4, 4));
        let agg = agglomerate_matrix(&mm, &q).unwrap().to_dense();
        assert!(agg.symmetric_eigenvalues().min() > 0.5);
    }
}
