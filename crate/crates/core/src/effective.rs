//! Forward model of an arbitrary coarse stiffness matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::linsolve::{factor_spd, Factorization};
use crate::mesh::{CartesianMesh, NodeClasses};
use crate::sparse::{CsrMatrix, SparseSymMatrix, SymTriplets};

/// Solver for `S_0 x = R load - R S E u0` with boundary values `u0`,
/// factorizing the interior block once.
#[derive(Clone, Debug)]
pub struct DirichletSolver {
    classes: NodeClasses,
    factor: Factorization,
    coupling: CsrMatrix,
}

impl DirichletSolver {
    pub fn new(mesh: &CartesianMesh, s: &SparseSymMatrix) -> Result<Self> {
        check_dim(mesh.node_count(), s.dim())?;
        let classes = mesh.classify_nodes();
        let factor = factor_spd(&s.submatrix(&classes.interior))?;
        let coupling = s.block(&classes.interior, &classes.boundary);
        Ok(Self { classes, factor, coupling })
    }

    pub fn classes(&self) -> &NodeClasses {
        &self.classes
    }

    pub fn node_count(&self) -> usize {
        self.classes.interior.len() + self.classes.boundary.len()
    }

    pub fn factorization(&self) -> &Factorization {
        &self.factor
    }

    /// Full nodal solution for boundary data `u0` and coarse load vector
    /// `load = M_H f_H`.
    pub fn solve(&self, u0: &[f64], load: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.classes.boundary.len(), u0.len())?;
        check_dim(self.node_count(), load.len())?;
        let sb = self.coupling.mul_vec(u0)?;
        let rhs = DVector::from_iterator(
            self.classes.interior.len(),
            self.classes.interior.iter().zip(sb.iter()).map(|(&i, &c)| load[i] - c),
        );
        let x = self.factor.solve(rhs.as_slice())?;
        let mut u = DVector::zeros(self.node_count());
        for (&i, &v) in self.classes.interior.iter().zip(x.iter()) {
            u[i] = v;
        }
        for (&b, &v) in self.classes.boundary.iter().zip(u0) {
            u[b] = v;
        }
        Ok(u)
    }

    /// Column-wise `solve` for boundary data stored as columns of `u0`.
    pub fn solve_many(&self, u0: &DMatrix<f64>, load: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.classes.boundary.len(), u0.nrows())?;
        let cols: Vec<DVector<f64>> = (0..u0.ncols())
            .into_par_iter()
            .map(|k| self.solve(u0.column(k).as_slice(), load))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(self.node_count(), u0.ncols(), |i, k| cols[k][i]))
    }

    /// Dense `R^T S_0^{-1} R` on all nodes (zero boundary rows and columns).
    pub fn embedded_inverse(&self) -> DMatrix<f64> {
        let inv = self.factor.inverse();
        let m = self.node_count();
        let mut g = DMatrix::zeros(m, m);
        for (a, &i) in self.classes.interior.iter().enumerate() {
            for (b, &j) in self.classes.interior.iter().enumerate() {
                g[(i, j)] = inv[(a, b)];
            }
        }
        g
    }
}

pub fn solve_effective(
    mesh: &CartesianMesh,
    s: &SparseSymMatrix,
    u0: &[f64],
    load: &[f64],
) -> Result<DVector<f64>> {
    DirichletSolver::new(mesh, s)?.solve(u0, load)
}

/// Dense effective operator: `columns[:, k]` is the coarse solution for the
/// `k`-th boundary hat with the fixed load; `particular` is the response to
/// zero boundary data.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveOperator {
    pub columns: DMatrix<f64>,
    pub particular: DVector<f64>,
}

impl EffectiveOperator {
    pub fn build(mesh: &CartesianMesh, s: &SparseSymMatrix, load: &[f64]) -> Result<Self> {
        let solver = DirichletSolver::new(mesh, s)?;
        let n = solver.classes().boundary.len();
        let columns = solver.solve_many(&DMatrix::identity(n, n), load)?;
        let particular = solver.solve(&vec![0.0; n], load)?;
        Ok(Self { columns, particular })
    }

    /// Response to boundary data alone (the linear part).
    pub fn homogeneous(&self) -> DMatrix<f64> {
        let mut h = self.columns.clone();
        for mut c in h.column_iter_mut() {
            c -= &self.particular;
        }
        h
    }

    /// Prediction for arbitrary boundary data.
    pub fn apply(&self, u0: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.columns.ncols(), u0.len())?;
        let u = DVector::from_column_slice(u0);
        let weight: f64 = 1.0 - u.sum();
        Ok(&self.columns * u + &self.particular * weight)
    }
}

pub fn build_effective_matrix(
    mesh: &CartesianMesh,
    s: &SparseSymMatrix,
    load: &[f64],
) -> Result<EffectiveOperator> {
    EffectiveOperator::build(mesh, s, load)
}

/// `1/2 |L~|_F^-2 |L~ - L|_F^2` over matching columns.
pub fn functional_jh(observed: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<f64> {
    check_dim(observed.nrows(), predicted.nrows())?;
    check_dim(observed.ncols(), predicted.ncols())?;
    let norm2 = observed.norm_squared();
    if norm2 == 0.0 {
        return Err(Error::InvalidArgument("measurement matrix is zero".into()));
    }
    Ok(0.5 * (observed - predicted).norm_squared() / norm2)
}

/// Mass matrix of the trace space: piecewise linear on the boundary edges in
/// 2D, counting measure at the two end points in 1D.
pub fn boundary_mass(mesh: &CartesianMesh) -> SparseSymMatrix {
    let classes = mesh.classify_nodes();
    let n = classes.boundary.len();
    if mesh.dim() == 1 {
        return SparseSymMatrix::identity(n);
    }
    let h = mesh.side();
    let last = mesh.cells_per_axis();
    let mut t = SymTriplets::new(n);
    let on_side = |a: [usize; 2], b: [usize; 2]| {
        (0..2).any(|ax| a[ax] == b[ax] && (a[ax] == 0 || a[ax] == last))
    };
    for e in 0..mesh.element_count() {
        let v = mesh.element_nodes(e);
        for (p, q) in [(0, 1), (2, 3), (0, 2), (1, 3)] {
            let (a, b) = (v[p], v[q]);
            let (Some(ia), Some(ib)) = (classes.boundary_position(a), classes.boundary_position(b)) else {
                continue;
            };
            if !on_side(mesh.node_multi(a), mesh.node_multi(b)) {
                continue;
            }
            t.add(ia, ia, h / 3.0);
            t.add(ib, ib, h / 3.0);
            t.add(ia, ib, h / 6.0);
        }
    }
    t.build()
}

/// Diagnostic distance between two affine operators: the largest singular
/// value of the boundary-to-domain difference measured in the trace and
/// domain mass norms, combined with the mass norm of the source-response
/// difference.
pub fn dist_f(
    diff_homogeneous: &DMatrix<f64>,
    diff_particular: &DVector<f64>,
    domain_mass: &SparseSymMatrix,
    trace_mass: &SparseSymMatrix,
) -> Result<f64> {
    check_dim(domain_mass.dim(), diff_homogeneous.nrows())?;
    check_dim(trace_mass.dim(), diff_homogeneous.ncols())?;
    check_dim(domain_mass.dim(), diff_particular.len())?;
    let lm = domain_mass
        .to_dense()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 })?
        .l();
    let lb = trace_mass
        .to_dense()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 })?
        .l();
    // sigma_max(L_m^T D L_b^-T), formed as (L_b^-1 (L_m^T D)^T)^T
    let mut rt = (lm.transpose() * diff_homogeneous).transpose();
    if !lb.solve_lower_triangular_mut(&mut rt) {
        return Err(Error::NotPositiveDefinite { pivot: 0, value: 0.0 });
    }
    let op = rt.singular_values().iter().copied().fold(0.0, f64::max);
    let fpart = domain_mass.bilinear(diff_particular.as_slice(), diff_particular.as_slice())?.max(0.0);
    Ok((op * op + fpart).sqrt())
}

impl EffectiveOperator {
    pub fn distance(&self, other: &EffectiveOperator, mesh: &CartesianMesh) -> Result<f64> {
        let dm = crate::assembly::assemble_mass(mesh);
        dist_f(
            &(self.homogeneous() - other.homogeneous()),
            &(&self.particular - &other.particular),
            &dm,
            &boundary_mass(mesh),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_stiffness, Coefficient, Transfer};
    use crate::mesh::NestingMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mesh(dim: usize, cells: usize) -> CartesianMesh {
        CartesianMesh::new(dim, cells).unwrap()
    }

    fn laplace(m: &CartesianMesh) -> SparseSymMatrix {
        assemble_stiffness(m, &Coefficient::constant(*m, 1.0).unwrap()).unwrap()
    }

    fn random_stiffness(m: &CartesianMesh, seed: u64) -> SparseSymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..m.element_count()).map(|_| rng.random_range(1.0..50.0)).collect();
        assemble_stiffness(m, &Coefficient::new(*m, vals).unwrap()).unwrap()
    }

    /// Dense oracle of the block system with a general LU solve.
    fn dense_solve(m: &CartesianMesh, s: &SparseSymMatrix, u0: &[f64], load: &[f64]) -> DVector<f64> {
        let c = m.classify_nodes();
        let d = s.to_dense();
        let ni = c.interior.len();
        let a = DMatrix::from_fn(ni, ni, |i, j| d[(c.interior[i], c.interior[j])]);
        let rhs = DVector::from_fn(ni, |i, _| {
            load[c.interior[i]] - c.boundary.iter().zip(u0).map(|(&b, &v)| d[(c.interior[i], b)] * v).sum::<f64>()
        });
        let x = a.lu().solve(&rhs).unwrap();
        let mut u = DVector::zeros(m.node_count());
        for (k, &i) in c.interior.iter().enumerate() {
            u[i] = x[k];
        }
        for (&b, &v) in c.boundary.iter().zip(u0) {
            u[b] = v;
        }
        u
    }

    #[test]
    fn linear_boundary_data_is_reproduced() {
        let m = mesh(2, 8);
        let c = m.classify_nodes();
        let u0: Vec<f64> = c.boundary.iter().map(|&b| m.node_coords(b)[0]).collect();
        let u = solve_effective(&m, &laplace(&m), &u0, &vec![0.0; m.node_count()]).unwrap();
        for z in 0..m.node_count() {
            assert!((u[z] - m.node_coords(z)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_are_reproduced() {
        let m = mesh(2, 4);
        let s = random_stiffness(&m, 3);
        let n = m.classify_nodes().boundary.len();
        let u = solve_effective(&m, &s, &vec![2.5; n], &vec![0.0; m.node_count()]).unwrap();
        assert!(u.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn matches_dense_oracle_and_is_affine() {
        let m = mesh(2, 4);
        let s = random_stiffness(&m, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = m.classify_nodes().boundary.len();
        let u0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let load: Vec<f64> = (0..m.node_count()).map(|_| rng.random_range(0.0..1.0)).collect();
        let u = solve_effective(&m, &s, &u0, &load).unwrap();
        let oracle = dense_solve(&m, &s, &u0, &load);
        assert!((&u - &oracle).amax() < 1e-10 * oracle.amax());
        let a = solve_effective(&m, &s, &u0, &vec![0.0; m.node_count()]).unwrap();
        let b = solve_effective(&m, &s, &vec![0.0; n], &load).unwrap();
        assert!((u - a - b).amax() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_interior() {
        let m = mesh(1, 2);
        let s = SparseSymMatrix::from_lower_entries(3, [(0, 0, 1.0), (1, 1, -1.0), (2, 2, 1.0)]);
        assert!(matches!(
            solve_effective(&m, &s, &[0.0, 0.0], &[0.0; 3]),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn effective_matrix_columns() {
        let m = mesh(2, 4);
        let s = random_stiffness(&m, 11);
        let nest = NestingMap::new(m, mesh(2, 8)).unwrap();
        let load = Transfer::new(&nest).unwrap().load_vector(&vec![1.0; nest.fine.node_count()]).unwrap();
        let op = build_effective_matrix(&m, &s, load.as_slice()).unwrap();
        let n = op.columns.ncols();
        for k in [0, 5, n - 1] {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let oracle = dense_solve(&m, &s, &e, load.as_slice());
            assert!((op.columns.column(k) - oracle).amax() < 1e-10);
        }
        // affine structure: u0 = e1 + e2 gives col1 + col2 - particular
        let mut e12 = vec![0.0; n];
        e12[1] = 1.0;
        e12[2] = 1.0;
        let u = solve_effective(&m, &s, &e12, load.as_slice()).unwrap();
        let combo = op.columns.column(1) + op.columns.column(2) - &op.particular;
        assert!((u.clone() - combo).amax() < 1e-12);
        assert!((op.apply(&e12).unwrap() - u).amax() < 1e-12);
    }

    #[test]
    fn harmonic_extension_spot_check() {
        let m = mesh(2, 4);
        let s = laplace(&m);
        let op = build_effective_matrix(&m, &s, &vec![0.0; m.node_count()]).unwrap();
        assert!(op.particular.amax() == 0.0);
        for k in [0, 3, 9] {
            let mut e = vec![0.0; op.columns.ncols()];
            e[k] = 1.0;
            assert!((op.columns.column(k) - dense_solve(&m, &s, &e, &vec![0.0; m.node_count()])).amax() < 1e-12);
        }
    }

    #[test]
    fn functional_arithmetic() {
        let obs = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(functional_jh(&obs, &obs).unwrap(), 0.0);
        assert!((functional_jh(&obs, &(&obs * 2.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!(functional_jh(&DMatrix::zeros(2, 2), &obs).is_err());
    }

    #[test]
    fn functional_matches_elementwise_oracle() {
        let m = mesh(1, 8);
        let s = random_stiffness(&m, 5);
        let t = random_stiffness(&m, 6);
        let load = vec![0.1; m.node_count()];
        let a = build_effective_matrix(&m, &s, &load).unwrap().columns;
        let b = build_effective_matrix(&m, &t, &load).unwrap().columns;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                num += (a[(i, j)] - b[(i, j)]).powi(2);
                den += a[(i, j)].powi(2);
            }
        }
        assert!((functional_jh(&a, &b).unwrap() - 0.5 * num / den).abs() < 1e-15);
    }

    #[test]
    fn boundary_mass_measures_perimeter() {
        let m = mesh(2, 8);
        let bm = boundary_mass(&m);
        let total: f64 = bm.row_sums().iter().sum();
        assert!((total - 4.0).abs() < 1e-13);
        assert_eq!(boundary_mass(&mesh(1, 4)), SparseSymMatrix::identity(2));
    }

    #[test]
    fn distance_properties() {
        let m = mesh(1, 8);
        let s = random_stiffness(&m, 21);
        let load = vec![0.05; m.node_count()];
        let a = build_effective_matrix(&m, &s, &load).unwrap();
        assert_eq!(a.distance(&a, &m).unwrap(), 0.0);
        // doubling both parts: distance to the double equals the norm of the
        // original parts
        let doubled = EffectiveOperator {
            columns: {
                let mut h = a.homogeneous() * 2.0;
                for mut c in h.column_iter_mut() {
                    c += &a.particular * 2.0;
                }
                h
            },
            particular: &a.particular * 2.0,
        };
        let zero = EffectiveOperator {
            columns: DMatrix::zeros(a.columns.nrows(), a.columns.ncols()),
            particular: DVector::zeros(a.particular.len()),
        };
        let d = a.distance(&doubled, &m).unwrap();
        let norm = a.distance(&zero, &m).unwrap();
        assert!((d - norm).abs() < 1e-12 * norm);
        // 1D trace mass is the identity: operator part is sigma_max(L^T D)
        let mm = crate::assembly::assemble_mass(&m).to_dense();
        let op = (mm.clone().cholesky().unwrap().l().transpose() * a.homogeneous()).singular_values().max();
        let fp = (a.particular.transpose() * &mm * &a.particular)[(0, 0)];
        assert!((norm - (op * op + fp).sqrt()).abs() < 1e-12);
    }
}
