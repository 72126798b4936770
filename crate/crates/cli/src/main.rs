use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moire_radiance_cli::config::ExperimentConfig;
use moire_radiance_cli::{output_dir, presets, run_experiment, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "moire-radiance", version, about = "Cooperative emission of dipolar excitons on moire lattices")]
struct Cli {
    /// Worker threads for sweep points and realisations (default: all cores)
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config
    Run {
        config: PathBuf,
        /// Override `output.directory`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running it
    Validate { config: PathBuf },
    /// Run a built-in experiment (fig2, fig3, fig4, finite_size)
    Preset {
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Print the preset config(s) instead of running
        #[arg(long)]
        print: bool,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ExperimentConfig::from_toml_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run_all(configs: &[(ExperimentConfig, PathBuf)]) -> ExitCode {
    let mut failed = false;
    for (config, dir) in configs {
        eprintln!("running {} -> {}", config.name, dir.display());
        match run_experiment(config, dir, |line| eprintln!("  {line}")) {
            Ok((experiment, manifest)) => {
                eprintln!("wrote {} files to {}", manifest.files.len() + 1, dir.display());
                if experiment.summary.failures > 0 {
                    eprintln!("{} of {} points failed", experiment.summary.failures, experiment.summary.points.len());
                    failed = true;
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    if failed {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match cli.command {
        Command::Validate { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    return ExitCode::FAILURE;
                }
            };
            let parsed: ExperimentConfig = match toml::from_str(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    return ExitCode::FAILURE;
                }
            };
            let diagnostics = parsed.validate();
            for d in &diagnostics {
                println!("{d}");
            }
            if diagnostics.is_empty() {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Run { config, out } => match load(&config) {
            Ok(c) => {
                let dir = out.unwrap_or_else(|| output_dir(&c));
                run_all(&[(c, dir)])
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::FAILURE
            }
        },
        Command::Preset { name, out, print } => {
            let Some(sources) = presets::preset_sources(&name) else {
                eprintln!("unknown preset `{name}` (available: {})", presets::NAMES.join(", "));
                return ExitCode::FAILURE;
            };
            if print {
                println!("{}", sources.join("\n"));
                return ExitCode::SUCCESS;
            }
            let configs = match presets::preset(&name).unwrap() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("preset {name}: {e}");
                    return ExitCode::FAILURE;
                }
            };
            let jobs: Vec<_> = configs
                .into_iter()
                .map(|mut c| {
                    let dir = out.join(&c.name);
                    c.output.directory = Some(dir.clone());
                    (c, dir)
                })
                .collect();
            run_all(&jobs)
        }
    }
}
