//! Experiment runner: configuration, the five pipelines and persistence.

pub mod config;
pub mod error;
pub mod experiments;

pub use config::{Experiment, ExperimentConfig};
pub use error::{CliError, CliResult};

/// Caps worker threads for rayon and the dense factorizations. With one
/// thread every output is bitwise reproducible.
pub fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    let Some(n) = threads else {
        return Ok(());
    };
    if n == 0 {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot configure thread pool: {e}")))?;
    faer::set_global_parallelism(if n == 1 { faer::Par::Seq } else { faer::Par::rayon(n) });
    Ok(())
}
