//! Experiment runner: experiment files in, CSV tables and JSON manifests out.

pub mod config;
pub mod error;
pub mod figures;
pub mod output;
pub mod runner;

use std::path::Path;

pub use config::ExperimentSpec;
pub use error::CliError;
pub use figures::{reproduce_figures, FigureSettings};
pub use runner::{evaluate, execute, RunSummary};

/// Loads either an experiment file or a run manifest (`.json`).
pub fn load_any(path: &Path) -> Result<ExperimentSpec, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        Ok(output::Manifest::read(path)?.spec)
    } else {
        config::load(path)
    }
}

/// Runs `f` on a dedicated pool of `workers` threads (default: all cores).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::config("workers", "must be >= 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::config("workers", e.to_string()))?;
    Ok(pool.install(f))
}
