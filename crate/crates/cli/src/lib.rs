//! Experiment runner for the `moire-radiance` command-line tool.

pub mod config;
pub mod output;
pub mod presets;
pub mod runner;

use std::path::{Path, PathBuf};

pub use config::{Diagnostic, ExperimentConfig};
pub use output::{Manifest, OutputError};
pub use runner::{Experiment, Summary};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "MOIRE_RADIANCE_WORKERS";

/// Run `config` and write its outputs to `dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    dir: &Path,
    progress: impl Fn(&str) + Sync,
) -> Result<(Experiment, Manifest), OutputError> {
    output::check_target(dir)?;
    let hash = output::input_hash(config);
    let experiment = runner::execute(config, &hash, progress);
    let manifest = output::write_outputs(config, &experiment, dir)?;
    Ok((experiment, manifest))
}

/// Output directory of a config: its own setting, else `<name>` under the
/// working directory.
pub fn output_dir(config: &ExperimentConfig) -> PathBuf {
    config.output.directory.clone().unwrap_or_else(|| PathBuf::from(&config.name))
}
