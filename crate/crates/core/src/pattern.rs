//! Quasi-local sparsity classes and their free-entry parametrization.
//!
//! Node `i` couples to node `j` when `z_i` lies in the closure of the
//! `ell`-neighborhood of `z_j`; on Cartesian meshes this is the node box
//! `|multi(i) - multi(j)|_inf <= ell + 1`. Free entries are enumerated
//! row-major over the upper triangle, 0-based.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::mesh::CartesianMesh;
use crate::sparse::SparseSymMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SparsityPattern {
    mesh: CartesianMesh,
    ell: usize,
    pairs: Vec<(usize, usize)>,
    row_start: Vec<usize>,
}

impl SparsityPattern {
    pub fn new(mesh: CartesianMesh, ell: usize) -> Self {
        let m = mesh.node_count();
        let reach = ell + 1;
        let npa = mesh.nodes_per_axis();
        let mut pairs = Vec::new();
        let mut row_start = Vec::with_capacity(m + 1);
        for i in 0..m {
            row_start.push(pairs.len());
            let [x, y] = mesh.node_multi(i);
            let ylo = y.saturating_sub(reach);
            let yhi = if mesh.dim() == 1 { 0 } else { (y + reach).min(npa - 1) };
            let xlo = x.saturating_sub(reach);
            let xhi = (x + reach).min(npa - 1);
            for yy in ylo..=yhi {
                for xx in xlo..=xhi {
                    let j = mesh.node_index([xx, yy]);
                    if j >= i {
                        pairs.push((i, j));
                    }
                }
            }
        }
        row_start.push(pairs.len());
        Self { mesh, ell, pairs, row_start }
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    /// Number of free entries.
    pub fn mu(&self) -> usize {
        self.pairs.len()
    }

    pub fn dim(&self) -> usize {
        self.mesh.node_count()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// `(i, j)` with `i <= j` for free entry `k`.
    pub fn pair(&self, k: usize) -> Result<(usize, usize)> {
        self.pairs
            .get(k)
            .copied()
            .ok_or(Error::IndexOutOfRange { index: k, len: self.pairs.len() })
    }

    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = (i.min(j), i.max(j));
        if j >= self.dim() {
            return None;
        }
        let (a, b) = (self.row_start[i], self.row_start[i + 1]);
        self.pairs[a..b].binary_search_by_key(&j, |p| p.1).ok().map(|p| a + p)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.index_of(i, j).is_some()
    }

    /// Zeroes every entry outside the pattern.
    pub fn project(&self, m: &SparseSymMatrix) -> Result<SparseSymMatrix> {
        check_dim(self.dim(), m.dim())?;
        Ok(SparseSymMatrix::from_lower_entries(
            self.dim(),
            m.lower_entries().filter(|&(i, j, _)| self.contains(i, j)),
        ))
    }

    pub fn project_dense(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), m.nrows())?;
        check_dim(self.dim(), m.ncols())?;
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for &(i, j) in &self.pairs {
            out[(i, j)] = m[(i, j)];
            out[(j, i)] = m[(i, j)];
        }
        Ok(out)
    }

    /// Derivative of the matrix with respect to free entry `k`.
    pub fn basis_matrix(&self, k: usize) -> Result<SparseSymMatrix> {
        let (i, j) = self.pair(k)?;
        Ok(SparseSymMatrix::from_lower_entries(self.dim(), [(j, i, 1.0)]))
    }

    pub fn pack(&self, m: &SparseSymMatrix) -> Result<DVector<f64>> {
        check_dim(self.dim(), m.dim())?;
        let mut s = DVector::zeros(self.mu());
        for (r, c, v) in m.lower_entries() {
            match self.index_of(c, r) {
                Some(k) => s[k] = v,
                None if v != 0.0 => return Err(Error::OutsidePattern { row: r, col: c }),
                None => {}
            }
        }
        Ok(s)
    }

    pub fn unpack(&self, s: &[f64]) -> Result<SparseSymMatrix> {
        check_dim(self.mu(), s.len())?;
        Ok(SparseSymMatrix::from_lower_entries(
            self.dim(),
            self.pairs.iter().zip(s).map(|(&(i, j), &v)| (j, i, v)),
        ))
    }

    pub fn unpack_dense(&self, s: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.mu(), s.len())?;
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for (&(i, j), &v) in self.pairs.iter().zip(s) {
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
        Ok(out)
    }

    /// True if every stored nonzero lies inside the pattern.
    pub fn conforms(&self, m: &SparseSymMatrix) -> bool {
        m.dim() == self.dim() && m.lower_entries().all(|(r, c, v)| v == 0.0 || self.contains(r, c))
    }
}
