use std::path::Path;
use std::process::{Command, Output};

use qlinv_core::assembly::assemble_stiffness;
use qlinv_core::{io, CartesianMesh, Coefficient, SparseSymMatrix};

fn qlinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlinv")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn unit_fem(cells: usize) -> SparseSymMatrix {
    let mesh = CartesianMesh::new(2, cells).unwrap();
    assemble_stiffness(&mesh, &Coefficient::constant(mesh, 1.0).unwrap()).unwrap()
}

#[test]
fn corrector_decay_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("decay");
    let run = qlinv(&["corrector-decay", "--out", path(&out), "--threads", "1"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let decay = std::fs::read_to_string(out.join("decay.csv")).unwrap();
    assert!(decay.starts_with("ell,energy\n"));
    assert_eq!(decay.lines().count(), 18);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "corrector-decay");
    assert_eq!(manifest["format_version"], 1);
    assert!(manifest.get("output").is_none());
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(files, ["decay.csv", "correctors.csv"]);
}

#[test]
fn flags_override_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    assert_eq!(code(&qlinv(&["corrector-decay", "--out", path(&first), "--ell", "0,1,2"])), 0);
    let second = dir.path().join("b");
    let manifest = first.join("manifest.json");
    let run = qlinv(&["corrector-decay", "--config", path(&manifest), "--out", path(&second), "--ell", "0,1"]);
    assert_eq!(code(&run), 0);
    let decay = std::fs::read_to_string(second.join("decay.csv")).unwrap();
    assert_eq!(decay.lines().count(), 3);
}

#[test]
fn simulate_writes_solutions_cross_sections_and_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("unit.mtx");
    io::save_matrix_market(&matrix, &unit_fem(16)).unwrap();
    let out = dir.path().join("sim");
    let run = qlinv(&["simulate", "--matrix", path(&matrix), "--rhs", "g1,g2", "--u0", "x1", "--out", path(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    for name in ["solution_unit_g1.csv", "cross_x2_unit_g2.csv", "cross_x1_reference_g1.csv", "gaps.csv"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let gaps = std::fs::read_to_string(out.join("gaps.csv")).unwrap();
    let values: Vec<f64> = gaps.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 2);
    // a unit-coefficient model cannot match the rough reference, but stays finite
    assert!(values.iter().all(|g| g.is_finite() && *g > 0.0));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(code(&qlinv(&["corrector-decay", "--threads", "0", "--out", path(&out)])), 2);
    assert_eq!(code(&qlinv(&["invert-full", "--noise", "-0.5", "--out", path(&out)])), 2);

    let decay = dir.path().join("decay");
    assert_eq!(code(&qlinv(&["corrector-decay", "--out", path(&decay), "--ell", "0,1"])), 0);
    let manifest = decay.join("manifest.json");
    assert_eq!(code(&qlinv(&["invert-full", "--config", path(&manifest), "--out", path(&out)])), 2);
    assert_eq!(code(&qlinv(&["corrector-decay", "--config", path(&manifest), "--paper-scale"])), 2);

    let text = std::fs::read_to_string(&manifest).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
    let future = dir.path().join("future.json");
    std::fs::write(&future, text).unwrap();
    assert_eq!(code(&qlinv(&["corrector-decay", "--config", path(&future), "--out", path(&out)])), 2);

    let matrix = dir.path().join("small.mtx");
    io::save_matrix_market(&matrix, &unit_fem(4)).unwrap();
    assert_eq!(code(&qlinv(&["simulate", "--matrix", path(&matrix), "--out", path(&out)])), 2);
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("zero.mtx");
    let m = unit_fem(16).dim();
    io::save_matrix_market(&matrix, &SparseSymMatrix::from_lower_entries(m, (0..m).map(|i| (i, i, 0.0)))).unwrap();
    let run = qlinv(&["simulate", "--matrix", path(&matrix), "--out", path(&dir.path().join("sim"))]);
    assert_eq!(code(&run), 3, "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn io_failures_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.mtx");
    let out = dir.path().join("sim");
    assert_eq!(code(&qlinv(&["simulate", "--matrix", path(&missing), "--out", path(&out)])), 4);
    let no_config = dir.path().join("none.json");
    assert_eq!(code(&qlinv(&["corrector-decay", "--config", path(&no_config)])), 4);
}
