//! Direct solvers: envelope Cholesky for SPD systems and a block-elimination
//! solver for equality-constrained (saddle-point) systems.
//!
//! Lexicographically numbered Cartesian meshes produce banded matrices, so a
//! variable-band (envelope) factorization stores the fill exactly and needs no
//! reordering.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::sparse::{CsrMatrix, SparseSymMatrix};

/// Relative residual guaranteed by [`Factorization::solve`] for well-conditioned
/// systems.
pub const FACTOR_TOL: f64 = 1e-12;
/// Relative residual target of the saddle-point solver.
pub const SADDLE_TOL: f64 = 1e-10;

/// Cholesky factor `L` of an SPD matrix stored row-wise inside its envelope.
#[derive(Clone, Debug)]
pub struct Factorization {
    n: usize,
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.offset[i]..self.offset[i + 1]]
    }

    pub fn solve(&self, b: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.n, b.len())?;
        let mut y = b.to_vec();
        for i in 0..self.n {
            let row = self.row(i);
            let f = self.first[i];
            let (off, diag) = row.split_at(row.len() - 1);
            let s: f64 = off.iter().zip(&y[f..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / diag[0];
        }
        for i in (0..self.n).rev() {
            let row = self.row(i);
            let f = self.first[i];
            let (off, diag) = row.split_at(row.len() - 1);
            y[i] /= diag[0];
            let xi = y[i];
            for (yk, l) in y[f..i].iter_mut().zip(off) {
                *yk -= l * xi;
            }
        }
        Ok(DVector::from_vec(y))
    }

    /// Solves for every column of `b`; columns are independent.
    pub fn solve_many(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.n, b.nrows())?;
        let cols: Vec<DVector<f64>> = (0..b.ncols())
            .into_par_iter()
            .map(|j| self.solve(b.column(j).as_slice()))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    /// Dense inverse, column by column.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_many(&DMatrix::identity(self.n, self.n)).expect("square identity")
    }
}

/// Factors an SPD matrix. A nonpositive pivot yields
/// [`Error::NotPositiveDefinite`].
pub fn factor_spd(a: &SparseSymMatrix) -> Result<Factorization> {
    let n = a.dim();
    let mut first = Vec::with_capacity(n);
    let mut offset = Vec::with_capacity(n + 1);
    offset.push(0);
    for i in 0..n {
        let (cols, _) = a.row(i);
        let f = cols.first().copied().unwrap_or(i).min(i);
        first.push(f);
        offset.push(offset[i] + (i - f + 1));
    }
    let mut data = vec![0.0; offset[n]];
    for i in 0..n {
        let (cols, vals) = a.row(i);
        let base = offset[i] - first[i];
        for (&c, &v) in cols.iter().zip(vals) {
            if c <= i {
                data[base + c] = v;
            }
        }
    }
    for i in 0..n {
        let fi = first[i];
        let (done, rest) = data.split_at_mut(offset[i]);
        let row_i = &mut rest[..i - fi + 1];
        for j in fi..i {
            let fj = first[j];
            let k0 = fi.max(fj);
            let row_j = &done[offset[j]..offset[j + 1]];
            let li = &row_i[k0 - fi..j - fi];
            let lj = &row_j[k0 - fj..j - fj];
            let s: f64 = li.iter().zip(lj).map(|(a, b)| a * b).sum();
            let djj = row_j[j - fj];
            row_i[j - fi] = (row_i[j - fi] - s) / djj;
        }
        let (off, diag) = row_i.split_at_mut(i - fi);
        let d = diag[0] - off.iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: i, value: d });
        }
        diag[0] = d.sqrt();
    }
    Ok(Factorization { n, first, offset, data })
}

/// Solver for `K w + C^T lambda = b`, `C w = 0` with SPD `K`.
///
/// Block elimination: `K` is factored once, the Schur complement
/// `C K^{-1} C^T` is formed densely (constraint counts are small) and
/// Cholesky-factored. Structurally zero constraint rows are pruned first.
#[derive(Clone, Debug)]
pub struct SaddleSolver {
    k: Factorization,
    c: CsrMatrix,
    kinv_ct: DMatrix<f64>,
    schur: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl SaddleSolver {
    pub fn new(k: &SparseSymMatrix, c: &CsrMatrix) -> Result<Self> {
        check_dim(k.dim(), c.ncols())?;
        let all: Vec<usize> = (0..c.ncols()).collect();
        let (c, _) = c.select_columns_prune_rows(&all);
        let kf = factor_spd(k)?;
        let nc = c.nrows();
        if nc == 0 {
            return Ok(Self { k: kf, c, kinv_ct: DMatrix::zeros(k.dim(), 0), schur: None });
        }
        let ct = c.transpose().to_dense();
        let kinv_ct = kf.solve_many(&ct)?;
        let mut schur = DMatrix::zeros(nc, nc);
        for j in 0..nc {
            let col = c.mul_vec(kinv_ct.column(j).as_slice())?;
            schur.set_column(j, &col);
        }
        let schur = (&schur + schur.transpose()) * 0.5;
        let scale = schur.diagonal().max();
        let chol = nalgebra::Cholesky::new(schur).ok_or(Error::RankDeficientConstraints { pivot: 0 })?;
        let l = chol.l_dirty();
        for i in 0..nc {
            if l[(i, i)] * l[(i, i)] <= 1e-13 * scale {
                return Err(Error::RankDeficientConstraints { pivot: i });
            }
        }
        Ok(Self { k: kf, c, kinv_ct, schur: Some(chol) })
    }

    pub fn dim(&self) -> usize {
        self.k.dim()
    }

    pub fn constraint_count(&self) -> usize {
        self.c.nrows()
    }

    /// Returns the primal part `w`.
    pub fn solve(&self, b: &[f64]) -> Result<DVector<f64>> {
        let x0 = self.k.solve(b)?;
        match &self.schur {
            None => Ok(x0),
            Some(chol) => {
                let cx = self.c.mul_vec(x0.as_slice())?;
                let lambda = chol.solve(&cx);
                Ok(x0 - &self.kinv_ct * lambda)
            }
        }
    }
}

/// One-shot saddle-point solve.
pub fn solve_saddle(k: &SparseSymMatrix, c: &CsrMatrix, b: &[f64]) -> Result<DVector<f64>> {
    check_dim(k.dim(), b.len())?;
    SaddleSolver::new(k, c)?.solve(b)
}
