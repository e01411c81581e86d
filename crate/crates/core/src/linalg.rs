//! Compressed sparse storage, direct solvers and spectral estimates.

use std::fmt::Write as _;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Row-compressed matrix. Duplicates are summed at construction; explicit
/// zeros produced by assembly are kept as structural entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Triplet accumulator.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.entries.push((i, j, v));
    }

    /// Adds the dense block `local[a][b]` at rows `rows[a]`, columns `cols[b]`.
    pub fn add_block(&mut self, rows: &[usize], cols: &[usize], local: &[Vec<f64>]) {
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                self.push(i, j, local[a][b]);
            }
        }
    }

    /// Same as `add_block` with `scale`, at an offset into a larger system.
    pub fn add_matrix(&mut self, m: &SparseMatrix, row_off: usize, col_off: usize, scale: f64) {
        for i in 0..m.nrows {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                self.push(row_off + i, col_off + m.col_idx[k], scale * m.values[k]);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn build(self) -> SparseMatrix {
        SparseMatrix::from_triplets(self.nrows, self.ncols, self.entries)
    }
}

impl SparseMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            assert!(i < nrows && j < ncols, "entry ({i},{j}) outside {nrows}x{ncols}");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: vec![],
            values: vec![],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut t = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, t)
    }

    /// Structural entry count.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k])))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|k| self.values[k] * x[self.col_idx[k]])
                    .sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.triplets().map(|(i, j, v)| (j, i, v)).collect())
    }

    /// `self + s * other`, union sparsity.
    pub fn add_scaled(&self, other: &SparseMatrix, s: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t: Vec<_> = self.triplets().collect();
        t.extend(other.triplets().map(|(i, j, v)| (i, j, s * v)));
        Self::from_triplets(self.nrows, self.ncols, t)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// Sparse product, structural entries of the product pattern kept.
    pub fn matmul(&self, other: &SparseMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut t = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut cols = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let (j, a) = (self.col_idx[k], self.values[k]);
                for l in other.row_ptr[j]..other.row_ptr[j + 1] {
                    let c = other.col_idx[l];
                    if mark[c] != i {
                        mark[c] = i;
                        acc[c] = 0.0;
                        cols.push(c);
                    }
                    acc[c] += a * other.values[l];
                }
            }
            for &c in &cols {
                t.push((i, c, acc[c]));
            }
        }
        Self::from_triplets(self.nrows, other.ncols, t)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||A - A^T||_F / ||A||_F`.
    pub fn relative_asymmetry(&self) -> f64 {
        let n = self.frobenius_norm();
        if n == 0.0 {
            return 0.0;
        }
        self.add_scaled(&self.transpose(), -1.0).frobenius_norm() / n
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] += v;
        }
        d
    }

    /// Block matrix from a grid of optional blocks. Row heights and column widths
    /// are taken from `rows` and `cols`.
    pub fn block(rows: &[usize], cols: &[usize], blocks: &[&[Option<&SparseMatrix>]]) -> Self {
        let nrows = rows.iter().sum();
        let ncols = cols.iter().sum();
        let mut b = TripletBuilder::new(nrows, ncols);
        let mut ro = 0;
        for (bi, brow) in blocks.iter().enumerate() {
            let mut co = 0;
            for (bj, blk) in brow.iter().enumerate() {
                if let Some(m) = blk {
                    assert_eq!((m.nrows, m.ncols), (rows[bi], cols[bj]), "block ({bi},{bj}) has the wrong shape");
                    b.add_matrix(m, ro, co, 1.0);
                }
                co += cols[bj];
            }
            ro += rows[bi];
        }
        b.build()
    }

    /// Principal submatrix on `keep` (in the given order).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut rmap = vec![usize::MAX; self.nrows];
        for (a, &i) in rows.iter().enumerate() {
            rmap[i] = a;
        }
        let mut cmap = vec![usize::MAX; self.ncols];
        for (b, &j) in cols.iter().enumerate() {
            cmap[j] = b;
        }
        let t = self
            .triplets()
            .filter(|&(i, j, _)| rmap[i] != usize::MAX && cmap[j] != usize::MAX)
            .map(|(i, j, v)| (rmap[i], cmap[j], v))
            .collect();
        Self::from_triplets(rows.len(), cols.len(), t)
    }

    /// Matrix-market coordinate dump (1-based indices).
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
        }
        s
    }

    /// Column-compressed arrays of this matrix (the row-compressed arrays of the transpose).
    fn csc_arrays(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let t = self.transpose();
        (t.row_ptr, t.col_idx, t.values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// `||A x - b|| / ||b||` (absolute when `b = 0`).
    pub residual: f64,
    pub status: String,
    pub nnz: usize,
    pub dim: usize,
}

pub fn residual_norm(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb > 0.0 {
        r / nb
    } else {
        r
    }
}

/// Rounding floor of the relative residual, `eps ||(|A| |x|)|| / ||b||`: the smallest
/// value any backward stable solver can be expected to reach.
pub fn residual_floor(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; a.nrows];
    for (i, j, v) in a.triplets() {
        ax[i] += (v * x[j]).abs();
    }
    let nb = norm(b);
    f64::EPSILON * norm(&ax) / if nb > 0.0 { nb } else { 1.0 }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Reusable sparse LU factorization with partial pivoting.
pub struct LuFactor {
    lu: Lu<usize, f64>,
    n: usize,
}

impl LuFactor {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::InvalidArgument("matrix is not square".into()));
        }
        let (cp, ri, v) = a.csc_arrays();
        let sym = SymbolicSparseColMatRef::new_checked(a.nrows, a.ncols, &cp, None, &ri);
        let m = SparseColMatRef::new(sym, &v);
        let lu = m.sp_lu().map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { index } => Error::SingularPivot(index),
            other => Error::Factorization(format!("{other:?}")),
        })?;
        Ok(Self { lu, n: a.nrows })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Sparse LU solve followed by up to three steps of iterative refinement.
pub fn factor_solve(a: &SparseMatrix, b: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
    let lu = LuFactor::new(a)?;
    let mut x = lu.solve(b);
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::SingularPivot(i));
    }
    let mut res = residual_norm(a, &x, b);
    for _ in 0..3 {
        if res <= 1e-14 {
            break;
        }
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let d = lu.solve(&r);
        let cand: Vec<f64> = x.iter().zip(&d).map(|(p, q)| p + q).collect();
        let cres = residual_norm(a, &cand, b);
        if !(cres < res) {
            break;
        }
        x = cand;
        res = cres;
    }
    let report = SolveReport {
        residual: res,
        status: "lu".into(),
        nnz: a.nnz(),
        dim: a.nrows,
    };
    Ok((x, report))
}

/// Reusable sparse Cholesky factorization.
pub struct CholFactor {
    llt: Llt<usize, f64>,
    n: usize,
}

impl CholFactor {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::InvalidArgument("matrix is not square".into()));
        }
        let (cp, ri, v) = a.csc_arrays();
        let sym = SymbolicSparseColMatRef::new_checked(a.nrows, a.ncols, &cp, None, &ri);
        let m = SparseColMatRef::new(sym, &v);
        let llt = m.sp_cholesky(Side::Lower).map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(Self { llt, n: a.nrows })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.llt.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Sparse Cholesky solve for symmetric positive definite matrices.
pub fn spd_solve(a: &SparseMatrix, b: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
    let x = CholFactor::new(a)?.solve(b);
    let report = SolveReport {
        residual: residual_norm(a, &x, b),
        status: "cholesky".into(),
        nnz: a.nnz(),
        dim: a.nrows,
    };
    Ok((x, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    /// `max|lambda| / min|lambda|`, `f64::INFINITY` when singular.
    pub value: f64,
    pub singular: bool,
}

/// Dense threshold for `condition_number`.
pub const DENSE_THRESHOLD: usize = 6000;

/// Spectral condition number from a dense eigen (symmetric) or singular value decomposition.
pub fn condition_number(a: &SparseMatrix, symmetric: bool) -> Result<Condition> {
    if a.nrows != a.ncols || a.nrows == 0 {
        return Err(Error::InvalidArgument("condition number needs a nonempty square matrix".into()));
    }
    if a.nrows > DENSE_THRESHOLD {
        return Err(Error::InvalidArgument(format!(
            "dimension {} above dense threshold {DENSE_THRESHOLD}",
            a.nrows
        )));
    }
    let mut d = Mat::<f64>::zeros(a.nrows, a.ncols);
    for (i, j, v) in a.triplets() {
        d[(i, j)] += v;
    }
    let (hi, lo) = if symmetric {
        let ev = d
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let abs = ev.iter().map(|v| v.abs());
        (abs.clone().fold(0.0, f64::max), abs.fold(f64::INFINITY, f64::min))
    } else {
        let sv = d.singular_values().map_err(|e| Error::Factorization(format!("{e:?}")))?;
        (sv[0], *sv.last().unwrap())
    };
    Ok(condition_from(hi, lo))
}

fn condition_from(hi: f64, lo: f64) -> Condition {
    if lo < 1e-300 || !lo.is_finite() {
        Condition {
            value: f64::INFINITY,
            singular: true,
        }
    } else {
        Condition {
            value: hi / lo,
            singular: false,
        }
    }
}

/// Largest eigenvalue magnitude of the symmetric operator `op` by Lanczos with
/// full reorthogonalization.
fn lanczos_max_abs(n: usize, steps: usize, op: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<f64> {
    let steps = steps.min(n);
    // deterministic, non-degenerate start vector
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 104729) as f64 / 104729.0).collect();
    let nq = norm(&q);
    q.iter_mut().for_each(|v| *v /= nq);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for j in 0..steps {
        let mut w = op(&basis[j]);
        if w.iter().any(|v| !v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        let a: f64 = w.iter().zip(&basis[j]).map(|(x, y)| x * y).sum();
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nb = norm(&w);
        if j + 1 == steps || nb <= 1e-14 * alpha.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300) {
            break;
        }
        beta.push(nb);
        w.iter_mut().for_each(|v| *v /= nb);
        basis.push(w);
    }
    let m = alpha.len();
    let mut t = Mat::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let ev = t
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    Ok(ev.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}

/// Condition estimate for large symmetric matrices: Lanczos on `A` for the
/// largest eigenvalue magnitude and on `A^{-1}` (through a sparse LU) for the smallest.
pub fn estimate_condition(a: &SparseMatrix, steps: usize) -> Result<Condition> {
    let hi = lanczos_max_abs(a.nrows, steps, &|x| a.mul_vec(x))?;
    let lu = match LuFactor::new(a) {
        Ok(lu) => lu,
        Err(Error::SingularPivot(_)) => return Ok(condition_from(hi, 0.0)),
        Err(e) => return Err(e),
    };
    let inv = lanczos_max_abs(a.nrows, steps, &|x| lu.solve(x))?;
    Ok(condition_from(hi, 1.0 / inv))
}

/// How a structural entry `(i, j)` is charged to the counted DOFs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Attribution {
    /// Entry counted with the weight of its row DOF.
    #[default]
    RowOwner,
    /// Entry counted with `w_i * w_j`.
    Product,
}

pub fn count_nnz(a: &SparseMatrix, weights: &[f64], attribution: Attribution) -> f64 {
    assert_eq!(weights.len(), a.nrows);
    a.triplets()
        .map(|(i, j, _)| match attribution {
            Attribution::RowOwner => weights[i],
            Attribution::Product => weights[i] * weights.get(j).copied().unwrap_or(0.0),
        })
        .sum()
}
