use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qlinv_core::assembly::assemble_stiffness;
use qlinv_core::inversion::{InversionConfig, Objective};
use qlinv_core::linsolve::factor_spd;
use qlinv_core::lod::assemble_lod_stiffness;
use qlinv_core::synth::{generate_measurements, random_coefficient};
use qlinv_core::{
    BoundaryHats, BoundarySet, CartesianMesh, FineProblem, FineSolver, NestingMap, NoiseModel, SparsityPattern,
};

fn nesting(coarse: usize, fine: usize) -> NestingMap {
    NestingMap::new(CartesianMesh::new(2, coarse).unwrap(), CartesianMesh::new(2, fine).unwrap()).unwrap()
}

fn fine_factorization(c: &mut Criterion) {
    let mesh = CartesianMesh::new(2, 128).unwrap();
    let k = assemble_stiffness(&mesh, &random_coefficient(&mesh, 1.0, 50.0, 1).unwrap()).unwrap();
    let interior = k.submatrix(&mesh.classify_nodes().interior);
    c.bench_function("envelope_cholesky_128x128", |b| b.iter(|| factor_spd(black_box(&interior)).unwrap()));
}

fn lod_assembly(c: &mut Criterion) {
    let nest = nesting(8, 64);
    let coefficient = random_coefficient(&CartesianMesh::new(2, 32).unwrap(), 1.0, 50.0, 2).unwrap();
    let problem = FineProblem::new(&nest, &coefficient).unwrap();
    let mut group = c.benchmark_group("lod_stiffness_8_64");
    group.sample_size(10);
    for ell in [1, 2] {
        group.bench_function(format!("ell{ell}"), |b| {
            b.iter(|| assemble_lod_stiffness(&problem, ell, BoundaryHats::Corrected).unwrap())
        });
    }
    group.finish();
}

fn gauss_newton_direction(c: &mut Criterion) {
    let nest = nesting(8, 32);
    let solver = FineSolver::new(&nest, &random_coefficient(&nest.fine, 1.0, 50.0, 3).unwrap()).unwrap();
    let f = vec![1.0; nest.fine.node_count()];
    let data = generate_measurements(&solver, &BoundarySet::FullBasis, &f, &NoiseModel::none(), 0).unwrap();
    let start = assemble_stiffness(&nest.coarse, &random_coefficient(&nest.coarse, 0.5, 2.0, 4).unwrap()).unwrap();
    let mut group = c.benchmark_group("gauss_newton_direction_8");
    group.sample_size(10);
    for ell in [1, 2] {
        let pattern = SparsityPattern::new(nest.coarse, ell);
        let objective = Objective::new(&pattern, &data).unwrap();
        let eval = objective.evaluate(pattern.pack(&start).unwrap().as_slice()).unwrap();
        let columns: Vec<usize> = (0..data.len()).collect();
        let config = InversionConfig::default();
        group.bench_function(format!("ell{ell}"), |b| {
            b.iter(|| objective.direction(black_box(&eval), &columns, &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, fine_factorization, lod_assembly, gauss_newton_direction);
criterion_main!(benches);
