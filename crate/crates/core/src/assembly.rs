//! Q1 finite element operators on Cartesian meshes.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::linsolve::{factor_spd, Factorization};
use crate::mesh::{CartesianMesh, NestingMap, NodeClasses, NodeSlot};
use crate::sparse::{CsrMatrix, SparseSymMatrix, SymTriplets};

/// Scalar diffusion coefficient, constant on each element of its own mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficient {
    mesh: CartesianMesh,
    values: Vec<f64>,
    alpha: f64,
    beta: f64,
}

impl Coefficient {
    pub fn new(mesh: CartesianMesh, values: Vec<f64>) -> Result<Self> {
        check_dim(mesh.element_count(), values.len())?;
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidArgument(format!("coefficient value {bad} is not positive")));
        }
        let alpha = values.iter().copied().fold(f64::INFINITY, f64::min);
        let beta = values.iter().copied().fold(0.0, f64::max);
        Ok(Self { mesh, values, alpha, beta })
    }

    pub fn constant(mesh: CartesianMesh, value: f64) -> Result<Self> {
        Self::new(mesh, vec![value; mesh.element_count()])
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn contrast(&self) -> f64 {
        self.beta / self.alpha
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.mesh, self.values.iter().map(|v| v * c).collect())
    }

    /// Per-element values on a (finer or equal) assembly mesh.
    pub fn on_mesh(&self, mesh: &CartesianMesh) -> Result<Vec<f64>> {
        if mesh.dim() != self.mesh.dim() || !mesh.cells_per_axis().is_multiple_of(self.mesh.cells_per_axis()) {
            return Err(Error::NonNested(format!(
                "coefficient mesh with {} cells does not nest in assembly mesh with {} cells",
                self.mesh.cells_per_axis(),
                mesh.cells_per_axis()
            )));
        }
        let r = mesh.cells_per_axis() / self.mesh.cells_per_axis();
        Ok((0..mesh.element_count())
            .map(|e| {
                let [a, b] = mesh.element_multi(e);
                self.values[self.mesh.element_index([a / r, b / r])]
            })
            .collect())
    }
}

/// 2x2 matrices of the 1D linear element of length `h`.
fn stiffness_1d(h: f64) -> [[f64; 2]; 2] {
    [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]]
}

fn mass_1d(h: f64) -> [[f64; 2]; 2] {
    [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]
}

/// Element matrix of `-div grad` (unit coefficient) on a cube of side `h`,
/// lexicographic vertex order.
pub fn local_stiffness(dim: usize, h: f64) -> [[f64; 4]; 4] {
    let k = stiffness_1d(h);
    let m = mass_1d(h);
    let mut out = [[0.0; 4]; 4];
    if dim == 1 {
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = k[i][j];
            }
        }
    } else {
        for a in 0..4 {
            for b in 0..4 {
                let (ax, ay, bx, by) = (a & 1, a >> 1, b & 1, b >> 1);
                out[a][b] = k[ax][bx] * m[ay][by] + m[ax][bx] * k[ay][by];
            }
        }
    }
    out
}

pub fn local_mass(dim: usize, h: f64) -> [[f64; 4]; 4] {
    let m = mass_1d(h);
    let mut out = [[0.0; 4]; 4];
    if dim == 1 {
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = m[i][j];
            }
        }
    } else {
        for a in 0..4 {
            for b in 0..4 {
                out[a][b] = m[a & 1][b & 1] * m[a >> 1][b >> 1];
            }
        }
    }
    out
}

fn assemble_elementwise(
    mesh: &CartesianMesh,
    weights: &[f64],
    local: &[[f64; 4]; 4],
) -> SparseSymMatrix {
    let nv = mesh.vertices_per_element();
    let chunk = 1024;
    let parts: Vec<SymTriplets> = (0..mesh.element_count())
        .collect::<Vec<_>>()
        .par_chunks(chunk)
        .map(|elements| {
            let mut t = SymTriplets::new(mesh.node_count());
            for &e in elements {
                let nodes = mesh.element_nodes(e);
                let w = weights[e];
                for a in 0..nv {
                    for b in 0..=a {
                        t.add(nodes[a], nodes[b], w * local[a][b]);
                    }
                }
            }
            t
        })
        .collect();
    let mut all = SymTriplets::new(mesh.node_count());
    for p in parts {
        all.extend(p);
    }
    all.build()
}

/// Stiffness matrix `a(phi_j, phi_i)` for a piecewise constant coefficient.
pub fn assemble_stiffness(mesh: &CartesianMesh, coefficient: &Coefficient) -> Result<SparseSymMatrix> {
    let weights = coefficient.on_mesh(mesh)?;
    Ok(assemble_elementwise(mesh, &weights, &local_stiffness(mesh.dim(), mesh.side())))
}

pub fn assemble_mass(mesh: &CartesianMesh) -> SparseSymMatrix {
    let weights = vec![1.0; mesh.element_count()];
    assemble_elementwise(mesh, &weights, &local_mass(mesh.dim(), mesh.side()))
}

/// Values of the coarse element's local shape functions at a point with
/// local coordinates `s` in `[0,1]^dim`.
pub(crate) fn shape_values(dim: usize, s: [f64; 2]) -> [f64; 4] {
    let phi = |t: f64| [1.0 - t, t];
    let px = phi(s[0]);
    if dim == 1 {
        [px[0], px[1], 0.0, 0.0]
    } else {
        let py = phi(s[1]);
        [px[0] * py[0], px[1] * py[0], px[0] * py[1], px[1] * py[1]]
    }
}

/// Fine-grid nodal interpolation of coarse Q1 functions (exact injection),
/// as a fine-by-coarse matrix.
pub fn prolongation(nesting: &NestingMap) -> CsrMatrix {
    let (coarse, fine) = (&nesting.coarse, &nesting.fine);
    let r = nesting.ratio();
    let mut t = Vec::new();
    for k in 0..fine.node_count() {
        let multi = fine.node_multi(k);
        let mut cell = [0usize; 2];
        let mut s = [0.0; 2];
        for a in 0..fine.dim() {
            cell[a] = (multi[a] / r).min(coarse.cells_per_axis() - 1);
            s[a] = (multi[a] - cell[a] * r) as f64 / r as f64;
        }
        let element = coarse.element_index(cell);
        let values = shape_values(fine.dim(), s);
        for (&i, &v) in coarse.element_nodes(element).iter().zip(&values) {
            if v != 0.0 {
                t.push((k, i, v));
            }
        }
    }
    CsrMatrix::from_triplets(fine.node_count(), coarse.node_count(), t)
}

/// Coarse/fine transfer operators with cached mass matrices.
#[derive(Clone, Debug)]
pub struct Transfer {
    pub nesting: NestingMap,
    pub prolongation: CsrMatrix,
    pub fine_mass: SparseSymMatrix,
    pub coarse_mass: SparseSymMatrix,
    coarse_mass_factor: Factorization,
}

impl Transfer {
    pub fn new(nesting: &NestingMap) -> Result<Self> {
        let coarse_mass = assemble_mass(&nesting.coarse);
        Ok(Self {
            nesting: nesting.clone(),
            prolongation: prolongation(nesting),
            fine_mass: assemble_mass(&nesting.fine),
            coarse_mass_factor: factor_spd(&coarse_mass)?,
            coarse_mass,
        })
    }

    pub fn prolongate(&self, coarse: &[f64]) -> Result<DVector<f64>> {
        self.prolongation.mul_vec(coarse)
    }

    /// `(f, Lambda_i)` for all coarse hats, i.e. `M_H Pi_H f`.
    pub fn load_vector(&self, fine: &[f64]) -> Result<DVector<f64>> {
        let mf = self.fine_mass.mul_vec(fine)?;
        self.prolongation.tr_mul_vec(mf.as_slice())
    }

    /// L2 projection of a fine Q1 function onto the coarse Q1 space.
    pub fn l2_project(&self, fine: &[f64]) -> Result<DVector<f64>> {
        let b = self.load_vector(fine)?;
        self.coarse_mass_factor.solve(b.as_slice())
    }

    /// Galerkin projection `P^T A P` of a fine operator.
    pub fn restrict_operator(&self, fine: &SparseSymMatrix) -> Result<SparseSymMatrix> {
        fine.galerkin(&self.prolongation)
    }

    /// Squared L2 norm of a fine nodal function.
    pub fn fine_l2_norm(&self, fine: &[f64]) -> Result<f64> {
        Ok(self.fine_mass.bilinear(fine, fine)?.max(0.0).sqrt())
    }
}

/// `E^b_H`: boundary values in place, zero on interior nodes.
pub fn extension(u0: &[f64], classes: &NodeClasses) -> Result<DVector<f64>> {
    check_dim(classes.boundary.len(), u0.len())?;
    let mut v = DVector::zeros(classes.interior.len() + classes.boundary.len());
    for (&node, &val) in classes.boundary.iter().zip(u0) {
        v[node] = val;
    }
    Ok(v)
}

/// `R_H`: interior entries of `v - E^b_H tr v`.
pub fn restriction(v: &[f64], classes: &NodeClasses) -> Result<DVector<f64>> {
    check_dim(classes.interior.len() + classes.boundary.len(), v.len())?;
    Ok(DVector::from_iterator(classes.interior.len(), classes.interior.iter().map(|&i| v[i])))
}

pub fn trace(v: &[f64], classes: &NodeClasses) -> Result<DVector<f64>> {
    check_dim(classes.interior.len() + classes.boundary.len(), v.len())?;
    Ok(DVector::from_iterator(classes.boundary.len(), classes.boundary.iter().map(|&i| v[i])))
}

/// Embeds an interior vector into a full node vector (zero on the boundary).
pub fn embed_interior(x: &[f64], classes: &NodeClasses) -> Result<DVector<f64>> {
    check_dim(classes.interior.len(), x.len())?;
    let mut v = DVector::zeros(classes.interior.len() + classes.boundary.len());
    for (&node, &val) in classes.interior.iter().zip(x) {
        v[node] = val;
    }
    Ok(v)
}

/// Matrix of the projective quasi-interpolation `I_H`: element-local L2
/// projection onto Q1 followed by averaging over the elements sharing a
/// node. Rows are coarse interior nodes (boundary values are zero), columns
/// fine nodes.
pub fn quasi_interpolation_matrix(nesting: &NestingMap) -> CsrMatrix {
    let (coarse, fine) = (&nesting.coarse, &nesting.fine);
    let dim = coarse.dim();
    let nv = coarse.vertices_per_element();
    let r = nesting.ratio();
    let classes = coarse.classify_nodes();
    let fine_mass = local_mass(dim, fine.side());
    // inverse of the 1D coarse element mass matrix
    let hc = coarse.side();
    let inv1 = [[4.0 / hc, -2.0 / hc], [-2.0 / hc, 4.0 / hc]];
    let mut inv = [[0.0; 4]; 4];
    for a in 0..nv {
        for b in 0..nv {
            inv[a][b] = if dim == 1 {
                inv1[a][b]
            } else {
                inv1[a & 1][b & 1] * inv1[a >> 1][b >> 1]
            };
        }
    }
    let weight = 1.0 / nv as f64;

    let rows: Vec<Vec<(usize, usize, f64)>> = (0..coarse.element_count())
        .into_par_iter()
        .map(|t| {
            let cnodes = coarse.element_nodes(t);
            let origin = coarse.element_multi(t);
            // B[a][fine node] = int_T phi_k Lambda_a
            let mut b: std::collections::BTreeMap<usize, [f64; 4]> = Default::default();
            for e in nesting.fine_elements_in(&coarse.element_box(t)) {
                let fnodes = fine.element_nodes(e);
                let lambda: Vec<[f64; 4]> = fnodes
                    .iter()
                    .map(|&k| {
                        let m = fine.node_multi(k);
                        let mut s = [0.0; 2];
                        for a in 0..dim {
                            s[a] = (m[a] - origin[a] * r) as f64 / r as f64;
                        }
                        shape_values(dim, s)
                    })
                    .collect();
                for (p, &k) in fnodes.iter().enumerate() {
                    let entry = b.entry(k).or_insert([0.0; 4]);
                    for (q, lam) in lambda.iter().enumerate() {
                        for a in 0..nv {
                            entry[a] += fine_mass[p][q] * lam[a];
                        }
                    }
                }
            }
            let mut out = Vec::new();
            for (a, &z) in cnodes.iter().enumerate() {
                let NodeSlot::Interior(row) = classes.slot(z) else { continue };
                for (&k, bk) in &b {
                    let c: f64 = (0..nv).map(|q| inv[a][q] * bk[q]).sum();
                    out.push((row, k, weight * c));
                }
            }
            out
        })
        .collect();
    CsrMatrix::from_triplets(classes.interior.len(), fine.node_count(), rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn mesh(dim: usize, cells: usize) -> CartesianMesh {
        CartesianMesh::new(dim, cells).unwrap()
    }

    #[test]
    fn one_dimensional_element_matrices() {
        let m = mesh(1, 2);
        let s = assemble_stiffness(&m, &Coefficient::constant(m, 1.0).unwrap()).unwrap();
        let h = 0.5;
        assert_eq!(s.get(0, 0), 1.0 / h);
        assert_eq!(s.get(0, 1), -1.0 / h);
        assert_eq!(s.get(1, 1), 2.0 / h);
        let mm = assemble_mass(&m);
        assert!((mm.get(0, 0) - 2.0 * h / 6.0).abs() < 1e-16);
        assert!((mm.get(0, 1) - h / 6.0).abs() < 1e-16);
    }

    /// Exact integrals of products of bilinear hats on the unit square,
    /// computed from the 1D moments int (1-x)^2 = 1/3, int x(1-x) = 1/6 and
    /// int 1 = 1 for derivatives.
    fn symbolic_unit_square() -> (DMatrix<f64>, DMatrix<f64>) {
        let phi = |a: usize| (a & 1, a >> 1);
        let m1 = |i: usize, j: usize| if i == j { 1.0 / 3.0 } else { 1.0 / 6.0 };
        let k1 = |i: usize, j: usize| if i == j { 1.0 } else { -1.0 };
        let k = DMatrix::from_fn(4, 4, |a, b| {
            let ((ax, ay), (bx, by)) = (phi(a), phi(b));
            k1(ax, bx) * m1(ay, by) + m1(ax, bx) * k1(ay, by)
        });
        let m = DMatrix::from_fn(4, 4, |a, b| {
            let ((ax, ay), (bx, by)) = (phi(a), phi(b));
            m1(ax, bx) * m1(ay, by)
        });
        (k, m)
    }

    #[test]
    fn square_element_matches_symbolic_oracle() {
        let (k, m) = symbolic_unit_square();
        let ls = local_stiffness(2, 1.0);
        let lm = local_mass(2, 1.0);
        for a in 0..4 {
            for b in 0..4 {
                assert!((ls[a][b] - k[(a, b)]).abs() < 1e-15);
                assert!((lm[a][b] - m[(a, b)]).abs() < 1e-15);
            }
        }
        assert!((ls[0][0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((ls[0][1] + 1.0 / 6.0).abs() < 1e-15);
        assert!((ls[0][3] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stiffness_kernel_and_symmetry() {
        let m = mesh(2, 8);
        let coarse = mesh(2, 4);
        let vals: Vec<f64> = (0..16).map(|i| 1.0 + i as f64).collect();
        let a = Coefficient::new(coarse, vals).unwrap();
        let s = assemble_stiffness(&m, &a).unwrap();
        assert!(s.row_sums().amax() <= 1e-13);
        let d = s.to_dense();
        assert_eq!(d, d.transpose());
        let s2 = assemble_stiffness(&m, &a.scaled(2.0).unwrap()).unwrap();
        assert_eq!(s2.to_dense(), d * 2.0);
    }

    #[test]
    fn stiffness_rejects_finer_coefficient() {
        let m = mesh(2, 4);
        let a = Coefficient::constant(mesh(2, 8), 1.0).unwrap();
        assert!(matches!(assemble_stiffness(&m, &a), Err(Error::NonNested(_))));
    }

    #[test]
    fn mass_sums_to_domain_measure() {
        for (d, c) in [(1, 8), (2, 4), (2, 16)] {
            let m = assemble_mass(&mesh(d, c));
            let total: f64 = m.row_sums().iter().sum();
            assert!((total - 1.0).abs() < 1e-13);
            assert!(factor_spd(&m).is_ok());
        }
    }

    fn nesting(dim: usize, c: usize, f: usize) -> NestingMap {
        NestingMap::new(mesh(dim, c), mesh(dim, f)).unwrap()
    }

    #[test]
    fn l2_projection_properties() {
        let n = nesting(2, 4, 16);
        let t = Transfer::new(&n).unwrap();
        let ones = vec![1.0; n.fine.node_count()];
        let p = t.l2_project(&ones).unwrap();
        assert!(p.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let coarse = DVector::from_fn(n.coarse.node_count(), |i, _| (i as f64 * 0.37).sin());
        let fine = t.prolongate(coarse.as_slice()).unwrap();
        let back = t.l2_project(fine.as_slice()).unwrap();
        assert!((back - coarse).amax() < 1e-12);
    }

    #[test]
    fn l2_projection_of_fine_hat_matches_dense_oracle() {
        let n = nesting(1, 2, 8);
        let t = Transfer::new(&n).unwrap();
        let mut hat = vec![0.0; 9];
        hat[3] = 1.0;
        let p = t.l2_project(&hat).unwrap();
        // dense oracle: M_H x = P^T M_h f with all matrices densified
        let pd = prolongation(&n).to_dense();
        let mh = assemble_mass(&n.fine).to_dense();
        let mc = assemble_mass(&n.coarse).to_dense();
        let rhs = pd.transpose() * mh * DVector::from_vec(hat);
        let oracle = mc.lu().solve(&rhs).unwrap();
        assert!((p - oracle).amax() < 1e-13);
    }

    #[test]
    fn boundary_operators() {
        let m = mesh(2, 4);
        let c = m.classify_nodes();
        let u0: Vec<f64> = (0..c.boundary.len()).map(|i| i as f64 * 0.5 - 3.0).collect();
        let e = extension(&u0, &c).unwrap();
        assert_eq!(trace(e.as_slice(), &c).unwrap().as_slice(), &u0[..]);
        assert!(restriction(e.as_slice(), &c).unwrap().iter().all(|&v| v == 0.0));
        let constant = extension(&vec![2.0; c.boundary.len()], &c).unwrap();
        for z in 0..m.node_count() {
            let expect = if m.is_boundary_node(z) { 2.0 } else { 0.0 };
            assert_eq!(constant[z], expect);
        }
        let v = DVector::from_fn(m.node_count(), |i, _| i as f64);
        let rebuilt = extension(trace(v.as_slice(), &c).unwrap().as_slice(), &c).unwrap()
            + embed_interior(restriction(v.as_slice(), &c).unwrap().as_slice(), &c).unwrap();
        assert_eq!(rebuilt, v);
        assert!(extension(&[1.0], &c).is_err());
    }

    #[test]
    fn quasi_interpolation_is_projective() {
        for (dim, c, f) in [(1, 4, 16), (2, 4, 8), (2, 2, 8)] {
            let n = nesting(dim, c, f);
            let ci = quasi_interpolation_matrix(&n);
            let p = prolongation(&n);
            let classes = n.coarse.classify_nodes();
            let prod = &ci.to_dense() * p.to_dense();
            // I_H P restricted to interior columns is the identity
            for (r, _) in classes.interior.iter().enumerate() {
                for (cidx, &col) in classes.interior.iter().enumerate() {
                    let expect = if r == cidx { 1.0 } else { 0.0 };
                    assert!((prod[(r, col)] - expect).abs() < 1e-12, "{dim} {c} {f}");
                }
            }
            let ones = vec![1.0; n.fine.node_count()];
            let iv = ci.mul_vec(&ones).unwrap();
            assert!(iv.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    /// Dense composition oracle: local L2 projections computed by solving the
    /// element mass systems with a generic dense solver, then averaged.
    #[test]
    fn quasi_interpolation_matches_dense_composition() {
        let n = nesting(2, 2, 4);
        let (coarse, fine) = (n.coarse, n.fine);
        let ci = quasi_interpolation_matrix(&n);
        let v = DVector::from_fn(fine.node_count(), |i, _| ((i * 7 % 11) as f64).sqrt());
        let p = prolongation(&n).to_dense();
        let mut local_vals = vec![vec![]; coarse.node_count()];
        for t in 0..coarse.element_count() {
            // restrict the fine mass to fine elements in T
            let mut mt = DMatrix::zeros(fine.node_count(), fine.node_count());
            let lm = local_mass(2, fine.side());
            for e in n.fine_elements_in(&coarse.element_box(t)) {
                let nodes = fine.element_nodes(e);
                for a in 0..4 {
                    for b in 0..4 {
                        mt[(nodes[a], nodes[b])] += lm[a][b];
                    }
                }
            }
            let cn = coarse.element_nodes(t);
            let pt = DMatrix::from_fn(fine.node_count(), 4, |k, a| p[(k, cn[a])]);
            let lhs = pt.transpose() * &mt * &pt;
            let rhs = pt.transpose() * &mt * &v;
            let c = lhs.lu().solve(&rhs).unwrap();
            for a in 0..4 {
                local_vals[cn[a]].push(c[a]);
            }
        }
        let classes = coarse.classify_nodes();
        let iv = ci.mul_vec(v.as_slice()).unwrap();
        for (r, &z) in classes.interior.iter().enumerate() {
            let avg: f64 = local_vals[z].iter().sum::<f64>() / local_vals[z].len() as f64;
            assert!((iv[r] - avg).abs() < 1e-12);
        }
    }
}
