//! Synthetic ground truth: coefficients, right-hand sides, fine reference
//! solves and noisy coarse measurements.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_stiffness, extension, trace, Coefficient, Transfer};
use crate::effective::DirichletSolver;
use crate::error::{check_dim, Error, Result};
use crate::inversion::MeasurementSet;
use crate::mesh::{CartesianMesh, NestingMap};

/// Independent `U(lo, hi)` values per element.
pub fn random_coefficient(mesh: &CartesianMesh, lo: f64, hi: f64, seed: u64) -> Result<Coefficient> {
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid coefficient range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..mesh.element_count()).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    Coefficient::new(*mesh, values)
}

/// `(2 + sin(2^8 pi x))^-1` sampled at element midpoints.
pub fn sine_coefficient_1d(mesh: &CartesianMesh) -> Result<Coefficient> {
    if mesh.dim() != 1 || mesh.cells_per_axis() < 512 {
        return Err(Error::InvalidArgument("sine coefficient needs a 1D mesh with at least 512 cells".into()));
    }
    let values = (0..mesh.element_count())
        .map(|e| sine_formula(mesh.element_center(e)[0]))
        .collect();
    Coefficient::new(*mesh, values)
}

fn sine_formula(x: f64) -> f64 {
    1.0 / (2.0 + (256.0 * std::f64::consts::PI * x).sin())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsKind {
    Unit,
    G1,
    G2,
}

impl FromStr for RhsKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(Self::Unit),
            "g1" => Ok(Self::G1),
            "g2" => Ok(Self::G2),
            other => Err(Error::InvalidArgument(format!("unknown right-hand side '{other}'"))),
        }
    }
}

impl fmt::Display for RhsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unit => "unit",
            Self::G1 => "g1",
            Self::G2 => "g2",
        })
    }
}

fn tent(t: f64) -> f64 {
    if t < 0.5 { t } else { 1.0 - t }
}

impl RhsKind {
    pub fn eval(self, [x, y]: [f64; 2]) -> f64 {
        match self {
            Self::Unit => 1.0,
            Self::G1 => 20.0 * tent(x) * tent(y),
            Self::G2 => {
                if x >= 0.5 {
                    10.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Nodal samples of a right-hand side.
pub fn experiment_rhs(kind: RhsKind, mesh: &CartesianMesh) -> Result<DVector<f64>> {
    if kind != RhsKind::Unit && mesh.dim() != 2 {
        return Err(Error::InvalidArgument(format!("right-hand side {kind} is defined in 2D only")));
    }
    Ok(DVector::from_iterator(
        mesh.node_count(),
        (0..mesh.node_count()).map(|i| kind.eval(mesh.node_coords(i))),
    ))
}

/// Fine-scale Dirichlet solver for coarse boundary data.
#[derive(Clone, Debug)]
pub struct FineSolver {
    pub transfer: Transfer,
    solver: DirichletSolver,
}

impl FineSolver {
    pub fn new(nesting: &NestingMap, coefficient: &Coefficient) -> Result<Self> {
        let stiffness = assemble_stiffness(&nesting.fine, coefficient)?;
        Ok(Self { transfer: Transfer::new(nesting)?, solver: DirichletSolver::new(&nesting.fine, &stiffness)? })
    }

    pub fn nesting(&self) -> &NestingMap {
        &self.transfer.nesting
    }

    /// Fine boundary values: trace of the coarse Q1 interpolant of `u0`.
    pub fn fine_boundary(&self, u0: &[f64]) -> Result<DVector<f64>> {
        let coarse = extension(u0, &self.transfer.nesting.coarse.classify_nodes())?;
        let fine = self.transfer.prolongate(coarse.as_slice())?;
        trace(fine.as_slice(), self.solver.classes())
    }

    /// Fine solution for coarse boundary data `u0` and fine nodal source `f`.
    pub fn solve(&self, u0: &[f64], f: &[f64]) -> Result<DVector<f64>> {
        let load = self.transfer.fine_mass.mul_vec(f)?;
        self.solver.solve(self.fine_boundary(u0)?.as_slice(), load.as_slice())
    }

    /// Column-wise `solve`, sharing one factorization.
    pub fn solve_many(&self, u0: &DMatrix<f64>, f: &[f64]) -> Result<DMatrix<f64>> {
        let load = self.transfer.fine_mass.mul_vec(f)?;
        let cols: Vec<DVector<f64>> = (0..u0.ncols())
            .into_par_iter()
            .map(|k| self.solver.solve(self.fine_boundary(u0.column(k).as_slice())?.as_slice(), load.as_slice()))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(self.nesting().fine.node_count(), u0.ncols(), |i, k| cols[k][i]))
    }

    /// Coarse load `P^T M_h f` for a fine nodal source.
    pub fn coarse_load(&self, f: &[f64]) -> Result<DVector<f64>> {
        self.transfer.load_vector(f)
    }
}

/// Nodal restriction to the coarse nodes.
pub fn coarsen(fine: &[f64], nesting: &NestingMap) -> Result<DVector<f64>> {
    check_dim(nesting.fine.node_count(), fine.len())?;
    Ok(DVector::from_iterator(
        nesting.coarse.node_count(),
        nesting.coarse_to_fine().iter().map(|&i| fine[i]),
    ))
}

/// Multiplicative noise `v (1 + xi)`, `xi ~ U(-sigma, sigma)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise intensity {sigma} must be nonnegative")));
        }
        Ok(Self { sigma, seed })
    }

    pub fn none() -> Self {
        Self { sigma: 0.0, seed: 0 }
    }

    /// Intensities up to 5%, the range the experiments are tuned for.
    pub fn in_nominal_range(&self) -> bool {
        self.sigma <= 0.05
    }
}

/// Perturbs every entry in column-major order from one seeded stream.
pub fn apply_noise(values: &mut DMatrix<f64>, model: &NoiseModel) {
    if model.sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    for v in values.iter_mut() {
        let xi = rng.random_range(-model.sigma..=model.sigma);
        *v *= 1.0 + xi;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BoundarySet {
    /// All coarse boundary hats.
    FullBasis,
    /// `q` vectors with independent `U(-1, 1)` nodal values.
    Random { q: usize },
}

impl BoundarySet {
    pub fn build(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        match *self {
            Self::FullBasis => Ok(DMatrix::identity(n, n)),
            Self::Random { q } if q > 0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..=1.0)))
            }
            Self::Random { .. } => Err(Error::InvalidArgument("q must be positive".into())),
        }
    }
}

/// Fine solves for every boundary datum, coarsened and perturbed.
pub fn generate_measurements(
    solver: &FineSolver,
    boundary: &BoundarySet,
    f: &[f64],
    noise: &NoiseModel,
    seed: u64,
) -> Result<MeasurementSet> {
    let nesting = solver.nesting();
    let n = nesting.coarse.classify_nodes().boundary.len();
    let bd = boundary.build(n, seed)?;
    let fine = solver.solve_many(&bd, f)?;
    let mut observed = DMatrix::zeros(nesting.coarse.node_count(), bd.ncols());
    for (k, col) in fine.column_iter().enumerate() {
        let c = coarsen(col.as_slice(), nesting)?;
        observed.set_column(k, &c);
    }
    apply_noise(&mut observed, noise);
    let load = solver.coarse_load(f)?;
    MeasurementSet::new(bd, observed, load, noise.sigma)
}
