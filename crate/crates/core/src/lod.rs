//! Localized orthogonal decomposition on nested Cartesian meshes.
//!
//! Element correctors are computed on the patch `N^ell(T)` (the element grown
//! by `ell` layers) with zero values on the patch boundary and the constraint
//! `I_H w = 0`. Patches that share the same box share one saddle-point
//! factorization.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_stiffness, local_stiffness, prolongation, quasi_interpolation_matrix, shape_values, Coefficient,
};
use crate::error::{check_dim, Error, Result};
use crate::linsolve::SaddleSolver;
use crate::mesh::{ElementBox, NestingMap, NodeClasses};
use crate::sparse::{CsrMatrix, SparseSymMatrix, SymTriplets};

/// Which coarse hats receive element corrections.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryHats {
    /// Every hat is corrected, so constants stay in the kernel of the LOD
    /// stiffness matrix.
    #[default]
    Corrected,
    /// Only interior hats are corrected; boundary hats enter unchanged.
    Uncorrected,
}

/// Fine-scale data shared by all corrector computations.
#[derive(Clone, Debug)]
pub struct FineProblem {
    pub nesting: NestingMap,
    pub stiffness: SparseSymMatrix,
    pub weights: Vec<f64>,
    pub quasi_interpolation: CsrMatrix,
    pub prolongation: CsrMatrix,
    coarse_classes: NodeClasses,
}

impl FineProblem {
    pub fn new(nesting: &NestingMap, coefficient: &Coefficient) -> Result<Self> {
        let weights = coefficient.on_mesh(&nesting.fine)?;
        Ok(Self {
            nesting: nesting.clone(),
            stiffness: assemble_stiffness(&nesting.fine, coefficient)?,
            weights,
            quasi_interpolation: quasi_interpolation_matrix(nesting),
            prolongation: prolongation(nesting),
            coarse_classes: nesting.coarse.classify_nodes(),
        })
    }

    pub fn coarse_classes(&self) -> &NodeClasses {
        &self.coarse_classes
    }

    /// `K v` computed element by element, without the assembled matrix.
    pub fn apply_elementwise(&self, v: &[f64], elements: impl IntoIterator<Item = usize>) -> Result<DVector<f64>> {
        let fine = &self.nesting.fine;
        check_dim(fine.node_count(), v.len())?;
        let local = local_stiffness(fine.dim(), fine.side());
        let nv = fine.vertices_per_element();
        let mut out = DVector::zeros(fine.node_count());
        for e in elements {
            let nodes = fine.element_nodes(e);
            let w = self.weights[e];
            for a in 0..nv {
                let s: f64 = (0..nv).map(|b| local[a][b] * v[nodes[b]]).sum();
                out[nodes[a]] += w * s;
            }
        }
        Ok(out)
    }
}

/// Sparse fine-node vector with sorted indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    fn from_unsorted(mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut out = SparseVector::default();
        for (i, v) in entries {
            if out.indices.last() == Some(&i) {
                *out.values.last_mut().unwrap() += v;
            } else {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        out
    }

    pub fn to_dense(&self, len: usize) -> DVector<f64> {
        let mut d = DVector::zeros(len);
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            d[i] += v;
        }
        d
    }

    pub fn dot_dense(&self, d: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * d[i]).sum()
    }
}

/// Fine nodes strictly inside a coarse patch box, with arithmetic lookup.
struct PatchNodes {
    nodes: Vec<usize>,
    lo: [usize; 2],
    width: usize,
    height: usize,
    dim: usize,
}

impl PatchNodes {
    fn new(nesting: &NestingMap, patch: &ElementBox) -> Self {
        let fb = nesting.fine_box(patch);
        let dim = nesting.fine.dim();
        Self {
            nodes: nesting.fine_interior_nodes(patch),
            lo: [fb.lo[0] + 1, if dim == 2 { fb.lo[1] + 1 } else { 0 }],
            width: fb.hi[0] - fb.lo[0],
            height: if dim == 2 { fb.hi[1] - fb.lo[1] } else { 1 },
            dim,
        }
    }

    fn local(&self, multi: [usize; 2]) -> Option<usize> {
        let x = multi[0].checked_sub(self.lo[0]).filter(|&x| x < self.width)?;
        let y = if self.dim == 2 { multi[1].checked_sub(self.lo[1]).filter(|&y| y < self.height)? } else { 0 };
        Some(y * self.width + x)
    }
}

/// Load vector `a_T(Lambda_z, phi_k)` over patch nodes for local vertex `a` of
/// coarse element `t`.
fn element_rhs(problem: &FineProblem, patch: &PatchNodes, t: usize, vertex: usize) -> DVector<f64> {
    let (coarse, fine) = (&problem.nesting.coarse, &problem.nesting.fine);
    let dim = fine.dim();
    let r = problem.nesting.ratio();
    let origin = coarse.element_multi(t);
    let local = local_stiffness(dim, fine.side());
    let nv = fine.vertices_per_element();
    let mut b = DVector::zeros(patch.nodes.len());
    for e in problem.nesting.fine_elements_in(&coarse.element_box(t)) {
        let nodes = fine.element_nodes(e);
        let lam: Vec<f64> = nodes
            .iter()
            .map(|&k| {
                let m = fine.node_multi(k);
                let mut s = [0.0; 2];
                for a in 0..dim {
                    s[a] = (m[a] - origin[a] * r) as f64 / r as f64;
                }
                shape_values(dim, s)[vertex]
            })
            .collect();
        let w = problem.weights[e];
        for p in 0..nv {
            if let Some(row) = patch.local(fine.node_multi(nodes[p])) {
                b[row] += w * (0..nv).map(|q| local[p][q] * lam[q]).sum::<f64>();
            }
        }
    }
    b
}

/// Patch factorization shared by all elements with the same patch box.
struct PatchSolver {
    patch: PatchNodes,
    saddle: Option<SaddleSolver>,
}

impl PatchSolver {
    fn new(problem: &FineProblem, patch_box: &ElementBox) -> Result<Self> {
        let patch = PatchNodes::new(&problem.nesting, patch_box);
        if patch.nodes.is_empty() {
            return Ok(Self { patch, saddle: None });
        }
        let k = problem.stiffness.submatrix(&patch.nodes);
        let (c, _) = problem.quasi_interpolation.select_columns_prune_rows(&patch.nodes);
        Ok(Self { saddle: Some(SaddleSolver::new(&k, &c)?), patch })
    }

    /// Corrector `C_{T,ell} Lambda_z` for local vertex `vertex` of `t`.
    fn corrector(&self, problem: &FineProblem, t: usize, vertex: usize) -> Result<SparseVector> {
        let Some(saddle) = &self.saddle else { return Ok(SparseVector::default()) };
        let b = element_rhs(problem, &self.patch, t, vertex);
        let w = saddle.solve(b.as_slice())?;
        Ok(SparseVector { indices: self.patch.nodes.clone(), values: w.as_slice().to_vec() })
    }
}

/// Element correctors for one coarse element.
#[derive(Clone, Debug)]
pub struct ElementCorrectors {
    pub element: usize,
    pub patch: ElementBox,
    /// `(coarse node, corrector)` for each corrected vertex of the element.
    pub correctors: Vec<(usize, SparseVector)>,
}

fn corrected(problem: &FineProblem, hats: BoundaryHats, z: usize) -> bool {
    hats == BoundaryHats::Corrected || !problem.nesting.coarse.is_boundary_node(z)
}

/// All element correctors for oversampling `ell`.
pub fn compute_correctors(problem: &FineProblem, ell: usize, hats: BoundaryHats) -> Result<Vec<ElementCorrectors>> {
    let coarse = &problem.nesting.coarse;
    let mut groups: BTreeMap<ElementBox, Vec<usize>> = BTreeMap::new();
    for t in 0..coarse.element_count() {
        groups.entry(coarse.element_patch(t, ell)).or_default().push(t);
    }
    let groups: Vec<(ElementBox, Vec<usize>)> = groups.into_iter().collect();
    let per_group: Vec<Vec<ElementCorrectors>> = groups
        .par_iter()
        .map(|(patch_box, elements)| {
            let solver = PatchSolver::new(problem, patch_box)?;
            elements
                .iter()
                .map(|&t| {
                    let mut correctors = Vec::new();
                    for (a, &z) in coarse.element_nodes(t).iter().enumerate() {
                        if corrected(problem, hats, z) {
                            correctors.push((z, solver.corrector(problem, t, a)?));
                        }
                    }
                    Ok(ElementCorrectors { element: t, patch: *patch_box, correctors })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<ElementCorrectors> = per_group.into_iter().flatten().collect();
    all.sort_by_key(|c| c.element);
    Ok(all)
}

/// Corrected basis `(1 - C_ell) Lambda_z` for every coarse node.
#[derive(Clone, Debug)]
pub struct LodBasis {
    pub ell: usize,
    pub hats: BoundaryHats,
    pub functions: Vec<SparseVector>,
    fine_nodes: usize,
}

impl LodBasis {
    pub fn new(problem: &FineProblem, ell: usize, hats: BoundaryHats) -> Result<Self> {
        let correctors = compute_correctors(problem, ell, hats)?;
        Ok(Self::from_correctors(problem, ell, hats, &correctors))
    }

    pub fn from_correctors(
        problem: &FineProblem,
        ell: usize,
        hats: BoundaryHats,
        correctors: &[ElementCorrectors],
    ) -> Self {
        let coarse = &problem.nesting.coarse;
        let mut owners: Vec<Vec<&SparseVector>> = vec![Vec::new(); coarse.node_count()];
        for ec in correctors {
            for (z, c) in &ec.correctors {
                owners[*z].push(c);
            }
        }
        let pt = problem.prolongation.transpose();
        let functions = owners
            .par_iter()
            .enumerate()
            .map(|(z, parts)| {
                let (cols, vals) = pt.row(z);
                let mut entries: Vec<(usize, f64)> = cols.iter().copied().zip(vals.iter().copied()).collect();
                for c in parts {
                    entries.extend(c.indices.iter().zip(&c.values).map(|(&i, &v)| (i, -v)));
                }
                SparseVector::from_unsorted(entries)
            })
            .collect();
        Self { ell, hats, functions, fine_nodes: problem.nesting.fine.node_count() }
    }

    /// Fine function `sum_z c_z (1 - C_ell) Lambda_z`.
    pub fn to_fine(&self, coarse: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.functions.len(), coarse.len())?;
        let mut out = DVector::zeros(self.fine_nodes);
        for (f, &c) in self.functions.iter().zip(coarse) {
            if c != 0.0 {
                for (&i, &v) in f.indices.iter().zip(&f.values) {
                    out[i] += c * v;
                }
            }
        }
        Ok(out)
    }

    /// `S[i, j] = a(phi_j, phi_i)` from the assembled fine stiffness matrix;
    /// only pairs with overlapping supports are evaluated.
    pub fn stiffness(&self, problem: &FineProblem) -> SparseSymMatrix {
        let m = self.functions.len();
        let n = self.fine_nodes;
        let mut owner_ptr = vec![0usize; n + 1];
        for f in &self.functions {
            for &i in &f.indices {
                owner_ptr[i + 1] += 1;
            }
        }
        for i in 0..n {
            owner_ptr[i + 1] += owner_ptr[i];
        }
        let mut owners = vec![0usize; owner_ptr[n]];
        let mut fill = owner_ptr.clone();
        for (z, f) in self.functions.iter().enumerate() {
            for &i in &f.indices {
                owners[fill[i]] = z;
                fill[i] += 1;
            }
        }
        let k = problem.stiffness.as_csr();
        let columns: Vec<Vec<(usize, f64)>> = (0..m)
            .into_par_iter()
            .map_init(
                || (vec![0.0; n], vec![false; n], vec![false; m]),
                |(y, touched, seen), j| {
                    let f = &self.functions[j];
                    let mut touched_list = Vec::new();
                    for (&p, &v) in f.indices.iter().zip(&f.values) {
                        let (cols, vals) = k.row(p);
                        for (&c, &a) in cols.iter().zip(vals) {
                            y[c] += a * v;
                            if !touched[c] {
                                touched[c] = true;
                                touched_list.push(c);
                            }
                        }
                    }
                    let mut candidates = Vec::new();
                    for &c in &touched_list {
                        for &i in &owners[owner_ptr[c]..owner_ptr[c + 1]] {
                            if i >= j && !seen[i] {
                                seen[i] = true;
                                candidates.push(i);
                            }
                        }
                    }
                    candidates.sort_unstable();
                    let out = candidates
                        .iter()
                        .map(|&i| (i, self.functions[i].dot_dense(y)))
                        .filter(|&(_, v)| v != 0.0)
                        .collect();
                    for &c in &touched_list {
                        y[c] = 0.0;
                        touched[c] = false;
                    }
                    for &i in &candidates {
                        seen[i] = false;
                    }
                    out
                },
            )
            .collect();
        let mut t = SymTriplets::new(m);
        for (j, col) in columns.into_iter().enumerate() {
            for (i, v) in col {
                t.add(i, j, v);
            }
        }
        t.build()
    }
}

/// LOD stiffness matrix `S_H^ell(A)`.
pub fn assemble_lod_stiffness(problem: &FineProblem, ell: usize, hats: BoundaryHats) -> Result<SparseSymMatrix> {
    Ok(LodBasis::new(problem, ell, hats)?.stiffness(problem))
}

/// Solves the LOD Galerkin problem directly in the fine space: interior
/// coefficients `x` satisfy `a(phi(x) + w0, phi_i) = load_i` for every interior
/// node `i`, with `w0 = sum_b u0_b phi_b` over boundary nodes. Matrix entries
/// come from element-by-element fine products and a dense solve.
pub fn lod_solve(problem: &FineProblem, basis: &LodBasis, u0: &[f64], load: &[f64]) -> Result<DVector<f64>> {
    let classes = problem.coarse_classes();
    let m = problem.nesting.coarse.node_count();
    check_dim(classes.boundary.len(), u0.len())?;
    check_dim(m, load.len())?;
    let fine = &problem.nesting.fine;
    let support_elements = |f: &SparseVector| {
        let mut els: Vec<usize> = f.indices.iter().flat_map(|&k| fine.node_elements(k)).collect();
        els.sort_unstable();
        els.dedup();
        els
    };
    let mut u_full = vec![0.0; m];
    for (&b, &v) in classes.boundary.iter().zip(u0) {
        u_full[b] = v;
    }
    let w0 = basis.to_fine(&u_full)?;
    let all_elements: Vec<usize> = (0..fine.element_count()).collect();
    let kw0 = problem.apply_elementwise(w0.as_slice(), all_elements)?;

    let applied: Vec<DVector<f64>> = classes
        .interior
        .par_iter()
        .map(|&j| {
            let f = &basis.functions[j];
            problem.apply_elementwise(f.to_dense(fine.node_count()).as_slice(), support_elements(f))
        })
        .collect::<Result<_>>()?;
    let ni = classes.interior.len();
    let g = DMatrix::from_fn(ni, ni, |a, b| basis.functions[classes.interior[a]].dot_dense(applied[b].as_slice()));
    let rhs = DVector::from_fn(ni, |a, _| {
        let i = classes.interior[a];
        load[i] - basis.functions[i].dot_dense(kw0.as_slice())
    });
    let g = (&g + g.transpose()) * 0.5;
    let chol = g.cholesky().ok_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 })?;
    let x = chol.solve(&rhs);
    let mut u = DVector::from_vec(u_full);
    for (a, &i) in classes.interior.iter().enumerate() {
        u[i] = x[a];
    }
    Ok(u)
}

/// Correction `sum_{T containing z} C_{T,ell} Lambda_z` as a fine vector.
pub fn node_correction(problem: &FineProblem, z: usize, ell: usize) -> Result<DVector<f64>> {
    let coarse = &problem.nesting.coarse;
    let fine_n = problem.nesting.fine.node_count();
    let mut out = DVector::zeros(fine_n);
    for t in coarse.node_elements(z) {
        let vertex = coarse.element_nodes(t).iter().position(|&v| v == z).expect("node of its element");
        let solver = PatchSolver::new(problem, &coarse.element_patch(t, ell))?;
        let c = solver.corrector(problem, t, vertex)?;
        for (&i, &v) in c.indices.iter().zip(&c.values) {
            out[i] += v;
        }
    }
    Ok(out)
}

/// Energy norms `|grad (C - C_ell) Lambda_z|` for `ell = 0..=ell_max`, where
/// `C` is the global corrector (patch = whole domain).
pub fn corrector_decay_profile(problem: &FineProblem, z: usize, ell_max: usize) -> Result<Vec<f64>> {
    let global_ell = problem.nesting.coarse.cells_per_axis();
    let global = node_correction(problem, z, global_ell)?;
    let unit = assemble_stiffness(
        &problem.nesting.fine,
        &Coefficient::constant(problem.nesting.fine, 1.0)?,
    )?;
    (0..=ell_max)
        .map(|ell| {
            let d = &global - node_correction(problem, z, ell)?;
            Ok(unit.bilinear(d.as_slice(), d.as_slice())?.max(0.0).sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Transfer;
    use crate::effective::solve_effective;
    use crate::linsolve::factor_spd;
    use crate::mesh::CartesianMesh;
    use crate::pattern::SparsityPattern;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nesting(dim: usize, c: usize, f: usize) -> NestingMap {
        NestingMap::new(CartesianMesh::new(dim, c).unwrap(), CartesianMesh::new(dim, f).unwrap()).unwrap()
    }

    fn random_coefficient(dim: usize, cells: usize, seed: u64) -> Coefficient {
        let m = CartesianMesh::new(dim, cells).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Coefficient::new(m, (0..m.element_count()).map(|_| rng.random_range(1.0..50.0)).collect()).unwrap()
    }

    fn problem(dim: usize, c: usize, eps: usize, f: usize, seed: u64) -> FineProblem {
        FineProblem::new(&nesting(dim, c, f), &random_coefficient(dim, eps, seed)).unwrap()
    }

    #[test]
    fn correctors_lie_in_kernel_of_quasi_interpolation() {
        let p = problem(2, 4, 8, 16, 1);
        for ec in compute_correctors(&p, 1, BoundaryHats::Corrected).unwrap() {
            for (_, c) in &ec.correctors {
                let w = c.to_dense(p.nesting.fine.node_count());
                let iw = p.quasi_interpolation.mul_vec(w.as_slice()).unwrap();
                assert!(iw.amax() <= 1e-9 * w.amax().max(1.0));
            }
        }
    }

    #[test]
    fn correctors_are_supported_in_patch() {
        let p = problem(2, 4, 8, 16, 2);
        for ec in compute_correctors(&p, 1, BoundaryHats::Corrected).unwrap() {
            let fb = p.nesting.fine_box(&ec.patch);
            for (_, c) in &ec.correctors {
                for &k in &c.indices {
                    let [x, y] = p.nesting.fine.node_multi(k);
                    assert!(x > fb.lo[0] && x <= fb.hi[0] && y > fb.lo[1] && y <= fb.hi[1]);
                }
            }
        }
    }

    #[test]
    fn corrector_is_linear_in_local_combination() {
        let p = problem(2, 4, 8, 16, 3);
        let t = 5;
        let patch = p.nesting.coarse.element_patch(t, 1);
        let solver = PatchSolver::new(&p, &patch).unwrap();
        let mut sum = vec![0.0; solver.patch.nodes.len()];
        let mut rhs_sum = DVector::zeros(solver.patch.nodes.len());
        for a in 0..4 {
            let c = solver.corrector(&p, t, a).unwrap();
            for (s, v) in sum.iter_mut().zip(&c.values) {
                *s += v;
            }
            rhs_sum += element_rhs(&p, &solver.patch, t, a);
        }
        // sum of the local hats is constant on T, so a_T(1, .) vanishes
        assert!(rhs_sum.amax() < 1e-12);
        let combined = solver.saddle.as_ref().unwrap().solve(rhs_sum.as_slice()).unwrap();
        for (s, c) in sum.iter().zip(combined.iter()) {
            assert!((s - c).abs() < 1e-10);
        }
    }

    /// Interior-restricted fine stiffness and quasi-interpolation matrices.
    fn interior_blocks(p: &FineProblem) -> (Vec<usize>, DMatrix<f64>, DMatrix<f64>) {
        let interior = p.nesting.fine.classify_nodes().interior;
        let k = p.stiffness.to_dense();
        let c = p.quasi_interpolation.to_dense();
        let n = interior.len();
        let kii = DMatrix::from_fn(n, n, |i, j| k[(interior[i], interior[j])]);
        let ci = DMatrix::from_fn(c.nrows(), n, |r, j| c[(r, interior[j])]);
        (interior, kii, ci)
    }

    #[test]
    fn global_corrector_is_galerkin_orthogonal() {
        let p = problem(2, 2, 4, 8, 4);
        let global = p.nesting.coarse.cells_per_axis();
        let basis = LodBasis::new(&p, global, BoundaryHats::Corrected).unwrap();
        let (interior, _, ci) = interior_blocks(&p);
        // orthogonal projector onto Ker I_H among interior fine vectors
        let gram = (&ci * ci.transpose()).lu();
        let k = p.stiffness.to_dense();
        for f in &basis.functions {
            let kphi = &k * f.to_dense(p.nesting.fine.node_count());
            let r = DVector::from_fn(interior.len(), |i, _| kphi[interior[i]]);
            let projected = &r - ci.transpose() * gram.solve(&(&ci * &r)).unwrap();
            assert!(projected.amax() <= 1e-8, "{}", projected.amax());
        }
    }

    #[test]
    fn lod_stiffness_row_sums_and_spd() {
        let p = problem(2, 4, 8, 16, 5);
        for ell in [0, 1, 2] {
            let s = assemble_lod_stiffness(&p, ell, BoundaryHats::Corrected).unwrap();
            assert!(s.row_sums().amax() <= 1e-10 * s.max_abs(), "ell {ell}");
            let classes = p.nesting.coarse.classify_nodes();
            assert!(factor_spd(&s.submatrix(&classes.interior)).is_ok());
        }
    }

    #[test]
    fn lod_stiffness_support_bound() {
        let p = problem(2, 8, 16, 32, 6);
        for ell in [0, 1] {
            let s = assemble_lod_stiffness(&p, ell, BoundaryHats::Corrected).unwrap();
            let bound = SparsityPattern::new(p.nesting.coarse, 2 * ell);
            assert!(bound.conforms(&s), "ell {ell}");
            // the bound is attained: some coupling at distance 2 ell + 1 exists
            let coarse = p.nesting.coarse;
            let far = (0..coarse.node_count())
                .flat_map(|i| (0..coarse.node_count()).map(move |j| (i, j)))
                .filter(|&(i, j)| {
                    let (a, b) = (coarse.node_multi(i), coarse.node_multi(j));
                    a[0].abs_diff(b[0]).max(a[1].abs_diff(b[1])) == 2 * ell + 1
                })
                .any(|(i, j)| s.get(i, j).abs() > 0.0);
            assert!(far);
        }
    }

    /// Dense oracle: global correctors from the full KKT system solved by LU,
    /// then `S = Phi^T K Phi` with dense products.
    #[test]
    fn global_lod_matches_dense_oracle_for_constant_coefficient() {
        let n = nesting(2, 2, 8);
        let a = Coefficient::constant(n.fine, 1.0).unwrap();
        let p = FineProblem::new(&n, &a).unwrap();
        let s = assemble_lod_stiffness(&p, 2, BoundaryHats::Corrected).unwrap();
        let (interior, kii, ci) = interior_blocks(&p);
        let (ni, nc) = (interior.len(), ci.nrows());
        let mut kkt = DMatrix::zeros(ni + nc, ni + nc);
        kkt.view_mut((0, 0), (ni, ni)).copy_from(&kii);
        kkt.view_mut((0, ni), (ni, nc)).copy_from(&ci.transpose());
        kkt.view_mut((ni, 0), (nc, ni)).copy_from(&ci);
        let kkt = kkt.lu();
        let k = p.stiffness.to_dense();
        let pd = p.prolongation.to_dense();
        let m = n.coarse.node_count();
        let mut phi = DMatrix::zeros(n.fine.node_count(), m);
        for z in 0..m {
            let hat = pd.column(z).clone_owned();
            let kh = &k * &hat;
            let rhs = DVector::from_fn(ni + nc, |i, _| if i < ni { kh[interior[i]] } else { 0.0 });
            let sol = kkt.solve(&rhs).unwrap();
            let mut col = hat;
            for (i, &node) in interior.iter().enumerate() {
                col[node] -= sol[i];
            }
            phi.set_column(z, &col);
        }
        let oracle = phi.transpose() * &k * &phi;
        assert!((s.to_dense() - &oracle).amax() <= 1e-10 * oracle.amax());
    }

    #[test]
    fn scaling_coefficient_scales_stiffness() {
        let a = random_coefficient(2, 8, 9);
        let n = nesting(2, 4, 16);
        let p1 = FineProblem::new(&n, &a).unwrap();
        let p3 = FineProblem::new(&n, &a.scaled(3.0).unwrap()).unwrap();
        let s1 = assemble_lod_stiffness(&p1, 1, BoundaryHats::Corrected).unwrap().to_dense();
        let s3 = assemble_lod_stiffness(&p3, 1, BoundaryHats::Corrected).unwrap().to_dense();
        assert!((s3 - &s1 * 3.0).amax() <= 1e-10 * s1.amax());
    }

    fn random_data(p: &FineProblem, seed: u64) -> (Vec<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = p.coarse_classes().boundary.len();
        let u0 = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = Transfer::new(&p.nesting).unwrap();
        let load = t.load_vector(&vec![1.0; p.nesting.fine.node_count()]).unwrap();
        (u0, load)
    }

    #[test]
    fn lod_solve_agrees_with_stiffness_route() {
        let p = problem(2, 4, 8, 16, 10);
        for hats in [BoundaryHats::Corrected, BoundaryHats::Uncorrected] {
            let basis = LodBasis::new(&p, 1, hats).unwrap();
            let s = basis.stiffness(&p);
            let (u0, load) = random_data(&p, 11);
            let direct = lod_solve(&p, &basis, &u0, load.as_slice()).unwrap();
            let via_s = solve_effective(&p.nesting.coarse, &s, &u0, load.as_slice()).unwrap();
            assert!((direct - via_s).amax() <= 1e-9, "{hats:?}");
        }
    }

    #[test]
    fn lod_solve_reproduces_constants() {
        let p = problem(2, 4, 8, 16, 12);
        let basis = LodBasis::new(&p, 1, BoundaryHats::Corrected).unwrap();
        let n = p.coarse_classes().boundary.len();
        let u = lod_solve(&p, &basis, &vec![1.5; n], &vec![0.0; p.nesting.coarse.node_count()]).unwrap();
        assert!(u.iter().all(|v| (v - 1.5).abs() < 1e-10));
    }

    #[test]
    fn lod_converges_geometrically_in_ell() {
        let p = problem(2, 4, 8, 32, 13);
        let (u0, load) = random_data(&p, 14);
        let reference = {
            let b = LodBasis::new(&p, 4, BoundaryHats::Corrected).unwrap();
            lod_solve(&p, &b, &u0, load.as_slice()).unwrap()
        };
        let errors: Vec<f64> = (0..3)
            .map(|ell| {
                let b = LodBasis::new(&p, ell, BoundaryHats::Corrected).unwrap();
                (lod_solve(&p, &b, &u0, load.as_slice()).unwrap() - &reference).amax()
            })
            .collect();
        assert!(errors[1] < errors[0] && errors[2] < errors[1], "{errors:?}");
    }

    #[test]
    fn decay_profile_reaches_zero_on_full_patch() {
        let n = nesting(1, 8, 64);
        let p = FineProblem::new(&n, &random_coefficient(1, 32, 15)).unwrap();
        let profile = corrector_decay_profile(&p, 4, 8).unwrap();
        assert_eq!(profile.len(), 9);
        assert!(profile[8] <= 1e-9);
        for w in profile.windows(2).take(4) {
            assert!(w[1] < w[0], "{profile:?}");
        }
    }

    #[test]
    fn decay_profile_monotone_in_two_dimensions() {
        let p = problem(2, 4, 8, 16, 16);
        let z = p.nesting.coarse.node_index([2, 2]);
        let profile = corrector_decay_profile(&p, z, 3).unwrap();
        for w in profile.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{profile:?}");
        }
    }

    #[test]
    fn elementwise_application_matches_assembled_matrix() {
        let p = problem(2, 2, 4, 8, 17);
        let v: Vec<f64> = (0..p.nesting.fine.node_count()).map(|i| (i as f64).sin()).collect();
        let a = p.apply_elementwise(&v, 0..p.nesting.fine.element_count()).unwrap();
        let b = p.stiffness.mul_vec(&v).unwrap();
        assert!((a - b).amax() < 1e-12);
    }
}
