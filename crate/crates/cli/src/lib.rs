//! Command-line front end: dataset generation, training, evaluation,
//! sweeps and backward-pass benchmarks.

pub mod bench;
mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod report;

pub use commands::{resolve_config, run, Cli, Command, CommonArgs};
pub use error::{CliError, Result};

/// Caps the global rayon pool from the `THREADS` environment variable.
pub fn init_threads(value: Option<&str>) -> Result<()> {
    let Some(v) = value else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("THREADS must be a positive integer, got {v:?}")))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
