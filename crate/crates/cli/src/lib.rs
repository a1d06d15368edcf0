//! Batch runner for eigenpath traversal experiments.
//!
//! A run reads one JSON configuration, builds the instance path, the
//! generator and its rate schedule, integrates the dynamics (deterministic
//! ODE or Monte-Carlo trajectories) and compares the final infidelity with
//! the applicable bounds. Sweeps repeat a run along one parameter axis, and
//! `verify` runs seeded invariant suites.

pub mod config;
pub mod error;
pub mod experiment;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use error::{CliError, CliResult, EXIT_NUMERICAL, EXIT_VALIDATION};
pub use experiment::{build, Experiment};
pub use run::{execute, run, write_outputs, RunOutput};
pub use sweep::{sweep, write_sweep, Axis, SweepOutput, SweepRow};
pub use verify::{verify, write_report, Fault, Suite, VerifyOptions, VerifyReport};

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "POISSON_EIGENPATH_THREADS";

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, String> {
    match threads {
        None => Ok(f()),
        Some(0) => Err("thread count must be positive".into()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| e.to_string()),
    }
}
