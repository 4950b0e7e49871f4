//! Compressed sparse row matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// General rectangular CSR matrix with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::from_triplets(nrows, ncols, Vec::new())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.ncols, x.len())?;
        Ok(DVector::from_iterator(
            self.nrows,
            (0..self.nrows).map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum::<f64>()
            }),
        ))
    }

    pub fn tr_mul_vec(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.nrows, x.len())?;
        let mut out = DVector::zeros(self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += v * x[r];
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().map(|(r, c, v)| (c, r, v)).collect(),
        )
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            d[(r, c)] = v;
        }
        d
    }

    /// Keeps the given columns (in the given order) and drops rows that end up
    /// structurally empty or all zero. Returns the surviving row indices too.
    pub fn select_columns_prune_rows(&self, columns: &[usize]) -> (CsrMatrix, Vec<usize>) {
        let mut local = vec![usize::MAX; self.ncols];
        for (k, &c) in columns.iter().enumerate() {
            local[c] = k;
        }
        let mut kept_rows = Vec::new();
        let mut triplets = Vec::new();
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let entries: Vec<(usize, f64)> = cols
                .iter()
                .zip(vals)
                .filter(|&(&c, &v)| local[c] != usize::MAX && v != 0.0)
                .map(|(&c, &v)| (local[c], v))
                .collect();
            if !entries.is_empty() {
                let new_row = kept_rows.len();
                kept_rows.push(r);
                triplets.extend(entries.into_iter().map(|(c, v)| (new_row, c, v)));
            }
        }
        (CsrMatrix::from_triplets(kept_rows.len(), columns.len(), triplets), kept_rows)
    }
}

/// Accumulates symmetric entries; only the lower triangle is stored during
/// assembly, which makes the assembled matrix exactly symmetric.
#[derive(Clone, Debug, Default)]
pub struct SymTriplets {
    dim: usize,
    lower: Vec<(usize, usize, f64)>,
}

impl SymTriplets {
    pub fn new(dim: usize) -> Self {
        Self { dim, lower: Vec::new() }
    }

    /// Adds `value` at `(i, j)` and implicitly at `(j, i)`. Callers feeding
    /// both triangles of a symmetric element matrix must only pass `j <= i`.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.lower.push((r, c, value));
    }

    pub fn extend(&mut self, other: SymTriplets) {
        self.lower.extend(other.lower);
    }

    pub fn build(self) -> SparseSymMatrix {
        let lower = CsrMatrix::from_triplets(self.dim, self.dim, self.lower);
        SparseSymMatrix::from_lower(&lower)
    }
}

/// Symmetric sparse matrix. Both triangles are stored, mirrored from a single
/// lower-triangular source, so `get(i, j) == get(j, i)` bitwise.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymMatrix {
    full: CsrMatrix,
}

impl SparseSymMatrix {
    fn from_lower(lower: &CsrMatrix) -> Self {
        let mut t = Vec::with_capacity(2 * lower.nnz());
        for (r, c, v) in lower.triplets() {
            t.push((r, c, v));
            if r != c {
                t.push((c, r, v));
            }
        }
        Self { full: CsrMatrix::from_triplets(lower.nrows(), lower.ncols(), t) }
    }

    pub fn zeros(dim: usize) -> Self {
        SymTriplets::new(dim).build()
    }

    pub fn identity(dim: usize) -> Self {
        let mut t = SymTriplets::new(dim);
        for i in 0..dim {
            t.add(i, i, 1.0);
        }
        t.build()
    }

    /// Builds from a dense matrix, keeping the nonzeros of the lower triangle.
    /// The upper triangle must mirror it exactly.
    pub fn from_dense(d: &DMatrix<f64>) -> Result<Self> {
        check_dim(d.nrows(), d.ncols())?;
        let mut t = SymTriplets::new(d.nrows());
        for j in 0..d.ncols() {
            for i in j..d.nrows() {
                if d[(i, j)] != d[(j, i)] {
                    return Err(Error::InvalidArgument(format!("matrix is not symmetric at ({i}, {j})")));
                }
                if d[(i, j)] != 0.0 {
                    t.add(i, j, d[(i, j)]);
                }
            }
        }
        Ok(t.build())
    }

    pub fn from_lower_entries(dim: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut t = SymTriplets::new(dim);
        for (i, j, v) in entries {
            t.add(i, j, v);
        }
        t.build()
    }

    pub fn dim(&self) -> usize {
        self.full.nrows()
    }

    pub fn as_csr(&self) -> &CsrMatrix {
        &self.full
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.full.get(i, j)
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        self.full.row(i)
    }

    /// Stored entries with `col <= row`.
    pub fn lower_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.full.triplets().filter(|&(r, c, _)| c <= r)
    }

    pub fn nnz(&self) -> usize {
        self.full.nnz()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.full.mul_vec(x)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.full.to_dense()
    }

    pub fn row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|i| self.row(i).1.iter().sum()))
    }

    pub fn max_abs(&self) -> f64 {
        self.lower_entries().fold(0.0, |m, (_, _, v)| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> SparseSymMatrix {
        SparseSymMatrix::from_lower_entries(self.dim(), self.lower_entries().map(|(i, j, v)| (i, j, c * v)))
    }

    /// `self + c * other`, union of both structures.
    pub fn add_scaled(&self, c: f64, other: &SparseSymMatrix) -> Result<SparseSymMatrix> {
        check_dim(self.dim(), other.dim())?;
        let entries = self
            .lower_entries()
            .chain(other.lower_entries().map(|(i, j, v)| (i, j, c * v)));
        Ok(SparseSymMatrix::from_lower_entries(self.dim(), entries.collect::<Vec<_>>()))
    }

    /// Principal submatrix on `indices` (kept in the given order).
    pub fn submatrix(&self, indices: &[usize]) -> SparseSymMatrix {
        let mut local = vec![usize::MAX; self.dim()];
        for (k, &g) in indices.iter().enumerate() {
            local[g] = k;
        }
        let mut t = SymTriplets::new(indices.len());
        for (k, &g) in indices.iter().enumerate() {
            let (cols, vals) = self.row(g);
            for (&c, &v) in cols.iter().zip(vals) {
                let l = local[c];
                if l != usize::MAX && l <= k {
                    t.add(k, l, v);
                }
            }
        }
        t.build()
    }

    /// Rectangular block with rows `rows` and columns `cols`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut local = vec![usize::MAX; self.dim()];
        for (k, &g) in cols.iter().enumerate() {
            local[g] = k;
        }
        let mut t = Vec::new();
        for (k, &g) in rows.iter().enumerate() {
            let (cs, vals) = self.row(g);
            for (&c, &v) in cs.iter().zip(vals) {
                if local[c] != usize::MAX {
                    t.push((k, local[c], v));
                }
            }
        }
        CsrMatrix::from_triplets(rows.len(), cols.len(), t)
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let ay = self.mul_vec(y)?;
        Ok(x.iter().zip(ay.iter()).map(|(a, b)| a * b).sum())
    }

    /// `P^T A P` for a rectangular `P` (rows = dim of `self`).
    pub fn galerkin(&self, p: &CsrMatrix) -> Result<SparseSymMatrix> {
        check_dim(self.dim(), p.nrows())?;
        let pt = p.transpose();
        // A P, column by column via rows of A and P
        let mut ap = Vec::new();
        for r in 0..self.dim() {
            let (cols, vals) = self.row(r);
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for (&c, &v) in cols.iter().zip(vals) {
                let (pc, pv) = p.row(c);
                acc.extend(pc.iter().zip(pv).map(|(&j, &w)| (j, v * w)));
            }
            ap.extend(acc.into_iter().map(|(j, v)| (r, j, v)));
        }
        let ap = CsrMatrix::from_triplets(self.dim(), p.ncols(), ap);
        let mut t = SymTriplets::new(p.ncols());
        for i in 0..p.ncols() {
            let (rows, pv) = pt.row(i);
            let mut acc = std::collections::BTreeMap::<usize, f64>::new();
            for (&r, &w) in rows.iter().zip(pv) {
                let (js, vs) = ap.row(r);
                for (&j, &v) in js.iter().zip(vs) {
                    if j <= i {
                        *acc.entry(j).or_insert(0.0) += w * v;
                    }
                }
            }
            for (j, v) in acc {
                t.add(i, j, v);
            }
        }
        Ok(t.build())
    }
}
