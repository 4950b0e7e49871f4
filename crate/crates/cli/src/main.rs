use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qlinv_cli::config::U0Spec;
use qlinv_cli::experiments::{run, Outcome};
use qlinv_cli::{configure_threads, CliError, CliResult, Experiment, ExperimentConfig};
use qlinv_core::RhsKind;

#[derive(Parser)]
#[command(name = "qlinv", version, about = "LOD forward solves and reconstruction of coarse stiffness matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration or manifest of an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Derives all random seeds from this value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Comma-separated localization parameters.
    #[arg(long, global = true, value_delimiter = ',')]
    ell: Option<Vec<usize>>,

    /// Multiplicative noise intensity.
    #[arg(long, global = true)]
    noise: Option<f64>,

    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Large mesh resolutions instead of the desk-scale defaults.
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Energy-norm decay of a localized corrector in 1D.
    CorrectorDecay,
    /// L2 errors of coarse FEM and LOD against a fine reference.
    ForwardConvergence,
    /// Reconstruction from measurements for all boundary hats.
    InvertFull,
    /// Reconstruction from q random boundary conditions.
    InvertPartial,
    /// Coarse solves with stored stiffness matrices.
    Simulate {
        /// Matrix Market file; repeat for several matrices.
        #[arg(long, required = true)]
        matrix: Vec<PathBuf>,
        /// Right-hand sides (unit, g1, g2).
        #[arg(long, value_delimiter = ',')]
        rhs: Option<Vec<RhsKind>>,
        /// Boundary data: zero, x1, const:<c> or file:<path>.
        #[arg(long)]
        u0: Option<U0Spec>,
    },
}

impl Command {
    fn experiment(&self) -> Experiment {
        match self {
            Command::CorrectorDecay => Experiment::CorrectorDecay,
            Command::ForwardConvergence => Experiment::ForwardConvergence,
            Command::InvertFull => Experiment::InvertFull,
            Command::InvertPartial => Experiment::InvertPartial,
            Command::Simulate { .. } => Experiment::Simulate,
        }
    }
}

fn resolve(cli: &Cli) -> CliResult<ExperimentConfig> {
    let experiment = cli.command.experiment();
    let mut cfg = match &cli.config {
        Some(path) => {
            if cli.paper_scale {
                return Err(CliError::Config("--paper-scale conflicts with --config".into()));
            }
            let cfg = ExperimentConfig::load(path)?;
            if cfg.experiment != experiment {
                return Err(CliError::Config(format!(
                    "{} describes a {} run, not {experiment}",
                    path.display(),
                    cfg.experiment
                )));
            }
            cfg
        }
        None => ExperimentConfig::defaults(experiment, cli.paper_scale),
    };
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    if let Some(ells) = &cli.ell {
        cfg.ells = ells.clone();
    }
    if let Some(noise) = cli.noise {
        cfg.synth.noise = noise;
    }
    if let Command::Simulate { matrix, rhs, u0 } = &cli.command {
        cfg.simulate.matrices = matrix.clone();
        if let Some(rhs) = rhs {
            cfg.simulate.rhs = rhs.clone();
        }
        if let Some(u0) = u0 {
            cfg.simulate.u0 = u0.clone();
        }
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    let cfg = resolve(cli)?;
    let report = run(&cfg)?;
    match &report.outcome {
        Outcome::Decay(d) => {
            println!("energy at ell = 0: {:.6e}, at ell = {}: {:.6e}", d.energies[0], d.ells.len() - 1, d.energies[d.energies.len() - 1]);
        }
        Outcome::Convergence(c) => {
            println!("fitted L2 rate: FEM {:.3}, LOD {:.3}", c.fem_rate(), c.lod_rate());
        }
        Outcome::Inversion(r) => {
            for run in &r.runs {
                println!("{} ell = {}: final J = {:.6e} after {} iterations", run.variant, run.ell, run.trace.final_j(), run.trace.records.len() - 1);
            }
        }
        Outcome::Simulation(rows) => {
            for row in rows {
                println!("{} {}: relative L2 gap {:.6e}", row.matrix.display(), row.rhs, row.relative_gap);
            }
        }
    }
    println!("wrote {} files to {}", report.files.len(), report.output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qlinv: {e}");
            e.exit_code()
        }
    }
}
