//! Coarse effective models of heterogeneous diffusion: LOD forward solves,
//! quasi-local sparsity patterns and Gauss–Newton reconstruction of stiffness
//! matrices from coarse measurements.

pub mod assembly;
pub mod effective;
pub mod error;
pub mod inversion;
pub mod io;
pub mod linsolve;
pub mod lod;
pub mod mesh;
pub mod pattern;
pub mod sparse;
pub mod synth;

pub use assembly::{Coefficient, Transfer};
pub use effective::{DirichletSolver, EffectiveOperator};
pub use error::{Error, Result};
pub use inversion::{InversionConfig, InversionTrace, MeasurementSet, Objective};
pub use lod::{BoundaryHats, FineProblem, LodBasis};
pub use mesh::{CartesianMesh, NestingMap};
pub use pattern::SparsityPattern;
pub use sparse::{CsrMatrix, SparseSymMatrix};
pub use synth::{BoundarySet, FineSolver, NoiseModel, RhsKind};
