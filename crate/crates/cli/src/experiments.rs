//! The five experiment pipelines. Each returns its numbers for programmatic
//! checks and writes plot-ready files plus a manifest.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use qlinv_core::assembly::{assemble_mass, assemble_stiffness, Transfer};
use qlinv_core::effective::{solve_effective, DirichletSolver};
use qlinv_core::inversion::{run_inversion, InversionTrace};
use qlinv_core::lod::{assemble_lod_stiffness, corrector_decay_profile, node_correction};
use qlinv_core::synth::{generate_measurements, experiment_rhs, random_coefficient, sine_coefficient_1d};
use qlinv_core::{
    io, CartesianMesh, Coefficient, FineProblem, FineSolver, MeasurementSet, NestingMap, NoiseModel, Objective,
    RhsKind, SparseSymMatrix, SparsityPattern,
};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig, InitialGuess, U0Spec};
use crate::error::{CliError, CliResult};

/// Files written by one run; the manifest lists them in creation order.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn claim(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.root.join(name)
    }

    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> CliResult<()> {
        Ok(io::save_table(&self.claim(name), header, rows)?)
    }

    pub fn text(&mut self, name: &str, content: &str) -> CliResult<()> {
        Ok(std::fs::write(self.claim(name), content)?)
    }

    pub fn sparse(&mut self, name: &str, m: &SparseSymMatrix) -> CliResult<()> {
        Ok(io::save_matrix_market(&self.claim(name), m)?)
    }

    pub fn dense(&mut self, name: &str, m: &DMatrix<f64>) -> CliResult<()> {
        Ok(io::save_dense_csv(&self.claim(name), m)?)
    }

    /// Writes `manifest.json`: the resolved configuration (without the output
    /// directory) and the file list. No timestamps, so reruns compare equal.
    pub fn finish(mut self, config: &ExperimentConfig) -> CliResult<Vec<String>> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            #[serde(flatten)]
            config: &'a ExperimentConfig,
            tool_version: &'a str,
            files: &'a [String],
        }
        let mut config = config.clone();
        config.output = None;
        let files = self.files.clone();
        let manifest = Manifest { config: &config, tool_version: env!("CARGO_PKG_VERSION"), files: &files };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        self.text("manifest.json", &text)?;
        Ok(self.files)
    }
}

fn mesh(dim: usize, cells: usize) -> CliResult<CartesianMesh> {
    Ok(CartesianMesh::new(dim, cells)?)
}

fn nesting(dim: usize, coarse: usize, fine: usize) -> CliResult<NestingMap> {
    Ok(NestingMap::new(mesh(dim, coarse)?, mesh(dim, fine)?)?)
}

/// Heterogeneous coefficient on the eps mesh.
pub fn eps_coefficient(cfg: &ExperimentConfig) -> CliResult<Coefficient> {
    let [lo, hi] = cfg.synth.coefficient_range;
    Ok(random_coefficient(&mesh(cfg.mesh.dim, cfg.mesh.eps_cells)?, lo, hi, cfg.synth.coefficient_seed)?)
}

fn l2_gap(transfer: &Transfer, fine: &DVector<f64>, coarse: &DVector<f64>) -> CliResult<f64> {
    let injected = transfer.prolongate(coarse.as_slice())?;
    Ok(transfer.fine_l2_norm((fine - injected).as_slice())?)
}

#[derive(Clone, Debug)]
pub struct DecayResult {
    pub ells: Vec<usize>,
    pub energies: Vec<f64>,
}

impl DecayResult {
    /// `e(ell) / e(ell - 1)` for `ell >= 1`.
    pub fn ratios(&self) -> Vec<f64> {
        self.energies.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

pub fn corrector_decay(cfg: &ExperimentConfig, out: &mut OutputDir) -> CliResult<DecayResult> {
    let m = cfg.mesh;
    let nest = nesting(1, m.coarse_cells, m.fine_cells)?;
    let coefficient = sine_coefficient_1d(&nest.fine)?;
    let problem = FineProblem::new(&nest, &coefficient)?;
    let z = nest.coarse.node_count() / 2;
    let ell_max = cfg.ells.iter().copied().max().unwrap_or(0);
    let energies = corrector_decay_profile(&problem, z, ell_max)?;
    let ells: Vec<usize> = (0..=ell_max).collect();
    let rows: Vec<Vec<f64>> = ells.iter().zip(&energies).map(|(&l, &e)| vec![l as f64, e]).collect();
    out.table("decay.csv", &["ell", "energy"], &rows)?;

    let transfer = Transfer::new(&nest)?;
    let mut hat = vec![0.0; nest.coarse.node_count()];
    hat[z] = 1.0;
    let lambda = transfer.prolongate(&hat)?;
    let dumped: Vec<usize> = ells.iter().copied().filter(|&l| l <= 4).collect();
    let mut columns = vec![lambda];
    for &l in &dumped {
        columns.push(node_correction(&problem, z, l)?);
    }
    columns.push(node_correction(&problem, z, m.coarse_cells)?);
    let mut header = vec!["x".to_string(), "hat".to_string()];
    header.extend(dumped.iter().map(|l| format!("correction_ell{l}")));
    header.push("correction_global".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = (0..nest.fine.node_count())
        .map(|i| std::iter::once(nest.fine.node_coords(i)[0]).chain(columns.iter().map(|c| c[i])).collect())
        .collect();
    out.table("correctors.csv", &header, &rows)?;
    Ok(DecayResult { ells, energies })
}

#[derive(Clone, Debug)]
pub struct ConvergenceRow {
    pub h: f64,
    pub fem_error: f64,
    pub lod_error: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceResult {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceResult {
    /// Least-squares slope of `log(error)` against `log(H)`.
    pub fn lod_rate(&self) -> f64 {
        fitted_rate(self.rows.iter().map(|r| (r.h, r.lod_error)))
    }

    pub fn fem_rate(&self) -> f64 {
        fitted_rate(self.rows.iter().map(|r| (r.h, r.fem_error)))
    }
}

pub fn fitted_rate(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let pts: Vec<(f64, f64)> = points.map(|(h, e)| (h.ln(), e.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn forward_convergence(cfg: &ExperimentConfig, out: &mut OutputDir) -> CliResult<ConvergenceResult> {
    let m = cfg.mesh;
    let coefficient = eps_coefficient(cfg)?;
    let fine = mesh(m.dim, m.fine_cells)?;
    let ell = cfg.ells[0];
    let f = experiment_rhs(cfg.synth.rhs, &fine)?;
    let stiffness = assemble_stiffness(&fine, &coefficient)?;
    let fine_solver = DirichletSolver::new(&fine, &stiffness)?;
    let fine_load = assemble_mass(&fine).mul_vec(f.as_slice())?;
    let u_h = fine_solver.solve(&vec![0.0; fine.classify_nodes().boundary.len()], fine_load.as_slice())?;
    let mut rows = Vec::new();
    for &cells in &cfg.coarse_levels {
        let nest = nesting(m.dim, cells, m.fine_cells)?;
        let transfer = Transfer::new(&nest)?;
        let load = transfer.load_vector(f.as_slice())?;
        let zero = vec![0.0; nest.coarse.classify_nodes().boundary.len()];
        let fem = transfer.restrict_operator(&stiffness)?;
        let u_fem = solve_effective(&nest.coarse, &fem, &zero, load.as_slice())?;
        let problem = FineProblem::new(&nest, &coefficient)?;
        let lod = assemble_lod_stiffness(&problem, ell, cfg.hats)?;
        let u_lod = solve_effective(&nest.coarse, &lod, &zero, load.as_slice())?;
        rows.push(ConvergenceRow {
            h: nest.coarse.mesh_size(),
            fem_error: l2_gap(&transfer, &u_h, &u_fem)?,
            lod_error: l2_gap(&transfer, &u_h, &u_lod)?,
        });
    }
    let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.h, r.fem_error, r.lod_error]).collect();
    out.table("convergence.csv", &["H", "l2_error_fem", "l2_error_lod"], &table)?;
    out.dense("coefficient.csv", &coefficient_grid(&coefficient))?;
    Ok(ConvergenceResult { rows })
}

/// Element values as a grid (row = y index) for plotting.
fn coefficient_grid(c: &Coefficient) -> DMatrix<f64> {
    let m = c.mesh();
    let n = m.cells_per_axis();
    let rows = if m.dim() == 1 { 1 } else { n };
    DMatrix::from_fn(rows, n, |y, x| c.values()[m.element_index([x, y])])
}

#[derive(Clone, Debug)]
pub struct InversionRun {
    pub variant: String,
    pub ell: usize,
    pub mu: usize,
    pub trace: InversionTrace,
    pub matrix: SparseSymMatrix,
}

#[derive(Clone, Debug)]
pub struct InversionResult {
    pub measurements: MeasurementSet,
    pub runs: Vec<InversionRun>,
}

impl InversionResult {
    pub fn run(&self, variant: &str, ell: usize) -> Option<&InversionRun> {
        self.runs.iter().find(|r| r.variant == variant && r.ell == ell)
    }
}

pub fn initial_matrix(cfg: &ExperimentConfig, coarse: &CartesianMesh) -> CliResult<SparseSymMatrix> {
    let coefficient = match cfg.initial {
        InitialGuess::UnitCoefficient => Coefficient::constant(*coarse, 1.0)?,
        InitialGuess::RandomCoefficient { lo, hi, seed } => random_coefficient(coarse, lo, hi, seed)?,
    };
    Ok(assemble_stiffness(coarse, &coefficient)?)
}

pub fn measurements(cfg: &ExperimentConfig) -> CliResult<(FineSolver, MeasurementSet)> {
    let m = cfg.mesh;
    let nest = nesting(m.dim, m.coarse_cells, m.fine_cells)?;
    let solver = FineSolver::new(&nest, &eps_coefficient(cfg)?)?;
    let f = experiment_rhs(cfg.synth.rhs, &nest.fine)?;
    let noise = NoiseModel::new(cfg.synth.noise, cfg.synth.noise_seed)?;
    let data = generate_measurements(&solver, &cfg.synth.boundary, f.as_slice(), &noise, cfg.synth.boundary_seed)?;
    Ok((solver, data))
}

/// `invert-full` and `invert-partial`: one Gauss–Newton run per variant and
/// `ell`.
pub fn invert(cfg: &ExperimentConfig, out: &mut OutputDir) -> CliResult<InversionResult> {
    let (solver, data) = measurements(cfg)?;
    let coarse = solver.nesting().coarse;
    out.dense("measurements_boundary.csv", &data.boundary)?;
    out.dense("measurements_observed.csv", &data.observed)?;
    out.dense("measurements_load.csv", &DMatrix::from_column_slice(data.load.len(), 1, data.load.as_slice()))?;
    let start = initial_matrix(cfg, &coarse)?;
    let mut variants = vec![("full".to_string(), None)];
    if let Some(fraction) = cfg.randomized_fraction {
        variants.push(("randomized".to_string(), Some(fraction)));
    }
    let mut runs = Vec::new();
    let mut summary = Vec::new();
    for (variant, fraction) in &variants {
        for &ell in &cfg.ells {
            let pattern = SparsityPattern::new(coarse, ell);
            let s0 = pattern.pack(&start)?;
            let objective = Objective::new(&pattern, &data)?;
            let config = qlinv_core::InversionConfig { ell, randomized: *fraction, ..cfg.inversion.clone() };
            let trace = run_inversion(&objective, &config, s0.as_slice())?;
            let matrix = pattern.unpack(trace.parameters.as_slice())?;
            out.text(&format!("trace_{variant}_ell{ell}.jsonl"), &trace.to_jsonl())?;
            out.sparse(&format!("stiffness_{variant}_ell{ell}.mtx"), &matrix)?;
            summary.push(vec![
                if fraction.is_some() { 1.0 } else { 0.0 },
                ell as f64,
                pattern.mu() as f64,
                (trace.records.len() - 1) as f64,
                trace.final_j(),
            ]);
            runs.push(InversionRun { variant: variant.clone(), ell, mu: pattern.mu(), trace, matrix });
        }
    }
    out.table("summary.csv", &["randomized", "ell", "mu", "iterations", "final_j"], &summary)?;
    Ok(InversionResult { measurements: data, runs })
}

#[derive(Clone, Debug)]
pub struct SimulationRow {
    pub matrix: PathBuf,
    pub rhs: RhsKind,
    pub relative_gap: f64,
    pub solution: DVector<f64>,
}

pub fn boundary_values(spec: &U0Spec, coarse: &CartesianMesh) -> CliResult<Vec<f64>> {
    let classes = coarse.classify_nodes();
    let n = classes.boundary.len();
    Ok(match spec {
        U0Spec::Zero => vec![0.0; n],
        U0Spec::Constant(c) => vec![*c; n],
        U0Spec::X1 => classes.boundary.iter().map(|&b| coarse.node_coords(b)[0]).collect(),
        U0Spec::File(path) => {
            let m = io::load_dense_csv(path)?;
            if m.len() != n {
                return Err(CliError::Config(format!("{} holds {} values, expected {n}", path.display(), m.len())));
            }
            m.as_slice().to_vec()
        }
    })
}

fn cross_sections(coarse: &CartesianMesh, u: &DVector<f64>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let npa = coarse.nodes_per_axis();
    let mid = coarse.cells_per_axis() / 2;
    let at = |x: usize, y: usize| u[coarse.node_index([x, y])];
    let side = coarse.side();
    let along_x1 = (0..npa).map(|i| vec![i as f64 * side, at(i, mid)]).collect();
    let along_x2 = (0..npa).map(|j| vec![j as f64 * side, at(mid, j)]).collect();
    (along_x1, along_x2)
}

/// Solves with stored stiffness matrices for each right-hand side and
/// compares against the fine reference.
pub fn simulate(cfg: &ExperimentConfig, out: &mut OutputDir) -> CliResult<Vec<SimulationRow>> {
    let m = cfg.mesh;
    if m.dim != 2 {
        return Err(CliError::Config("simulate runs in 2D".into()));
    }
    let nest = nesting(m.dim, m.coarse_cells, m.fine_cells)?;
    let coarse = nest.coarse;
    let solver = FineSolver::new(&nest, &eps_coefficient(cfg)?)?;
    let u0 = boundary_values(&cfg.simulate.u0, &coarse)?;
    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    for (k, path) in cfg.simulate.matrices.iter().enumerate() {
        let s = io::load_matrix_market(path)?;
        if s.dim() != coarse.node_count() {
            return Err(CliError::Config(format!(
                "{} has dimension {}, coarse mesh has {} nodes",
                path.display(),
                s.dim(),
                coarse.node_count()
            )));
        }
        let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("matrix").to_string();
        for &rhs in &cfg.simulate.rhs {
            let f = experiment_rhs(rhs, &nest.fine)?;
            let load = solver.coarse_load(f.as_slice())?;
            let u = solve_effective(&coarse, &s, &u0, load.as_slice())?;
            let reference = solver.solve(&u0, f.as_slice())?;
            let norm = solver.transfer.fine_l2_norm(reference.as_slice())?;
            let gap = l2_gap(&solver.transfer, &reference, &u)? / norm;
            let table: Vec<Vec<f64>> = (0..coarse.node_count())
                .map(|i| {
                    let [x, y] = coarse.node_coords(i);
                    vec![i as f64, x, y, u[i]]
                })
                .collect();
            out.table(&format!("solution_{label}_{rhs}.csv"), &["node", "x1", "x2", "u"], &table)?;
            let (cx1, cx2) = cross_sections(&coarse, &u);
            out.table(&format!("cross_x2_{label}_{rhs}.csv"), &["x1", "u"], &cx1)?;
            out.table(&format!("cross_x1_{label}_{rhs}.csv"), &["x2", "u"], &cx2)?;
            if k == 0 {
                let coarse_ref = qlinv_core::synth::coarsen(reference.as_slice(), &nest)?;
                let (rx1, rx2) = cross_sections(&coarse, &coarse_ref);
                out.table(&format!("cross_x2_reference_{rhs}.csv"), &["x1", "u"], &rx1)?;
                out.table(&format!("cross_x1_reference_{rhs}.csv"), &["x2", "u"], &rx2)?;
            }
            gaps.push(vec![k as f64, rhs_code(rhs), gap]);
            rows.push(SimulationRow { matrix: path.clone(), rhs, relative_gap: gap, solution: u });
        }
    }
    out.table("gaps.csv", &["matrix_index", "rhs", "relative_l2_gap"], &gaps)?;
    Ok(rows)
}

fn rhs_code(r: RhsKind) -> f64 {
    match r {
        RhsKind::Unit => 0.0,
        RhsKind::G1 => 1.0,
        RhsKind::G2 => 2.0,
    }
}

/// Result of any experiment, for callers that only need the file list.
pub enum Outcome {
    Decay(DecayResult),
    Convergence(ConvergenceResult),
    Inversion(InversionResult),
    Simulation(Vec<SimulationRow>),
}

pub struct RunReport {
    pub outcome: Outcome,
    pub files: Vec<String>,
    pub output: PathBuf,
}

/// Validates, runs and writes the manifest.
pub fn run(cfg: &ExperimentConfig) -> CliResult<RunReport> {
    cfg.validate()?;
    let output = cfg.output_dir();
    let mut out = OutputDir::create(&output)?;
    let outcome = match cfg.experiment {
        Experiment::CorrectorDecay => Outcome::Decay(corrector_decay(cfg, &mut out)?),
        Experiment::ForwardConvergence => Outcome::Convergence(forward_convergence(cfg, &mut out)?),
        Experiment::InvertFull | Experiment::InvertPartial => Outcome::Inversion(invert(cfg, &mut out)?),
        Experiment::Simulate => Outcome::Simulation(simulate(cfg, &mut out)?),
    };
    let files = out.finish(cfg)?;
    Ok(RunReport { outcome, files, output })
}
