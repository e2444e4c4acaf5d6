use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hopfid::HopfCoefficients;
use hopfid_cli::config::{ConfigError, ExperimentConfig};
use hopfid_cli::presets::{reproduce, Figure, PresetOptions};
use hopfid_cli::run::{self, Outcome};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_CHECKS: u8 = 4;

/// Identify Hopf normal-form models of oscillators from pulse experiments
/// and control them with dynamic programming.
#[derive(Debug, Parser)]
#[command(name = "hopfid", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the model, optionally under a scripted input.
    Simulate,
    /// Run the pulse protocol and fit normal-form coefficients.
    Identify,
    /// Solve (or load) the cost-to-go table and run the closed loop.
    Control,
    /// Compute phase and amplitude response curves of a deterministic model.
    Curves,
    /// Rerun a published experiment with its bundled settings.
    Reproduce {
        figure: Figure,
        /// Population size for the population experiments.
        #[arg(long, default_value_t = 3000)]
        oscillators: usize,
        /// Coefficients TOML (as written by `identify`) to use instead of identifying.
        #[arg(long)]
        coefficients: Option<PathBuf>,
        /// Directory for cached cost-to-go tables.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("this command needs --config <FILE>".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_coefficients(path: &PathBuf) -> Result<HopfCoefficients> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.clone(),
        source,
    })?;
    let c: HopfCoefficients = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.clone(),
        message: e.to_string(),
    })?;
    c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(c)
}

fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Simulate => run::simulate(&load_config(cli)?),
        Command::Identify => run::identify_command(&load_config(cli)?),
        Command::Control => {
            let cfg = load_config(cli)?;
            let (out, _, _) = run::control_command(&cfg)?;
            out.finish(&cfg.output_dir)?;
            Ok(out)
        }
        Command::Curves => run::curves_command(&load_config(cli)?),
        Command::Reproduce {
            figure,
            oscillators,
            coefficients,
            cache_dir,
        } => {
            let opts = PresetOptions {
                output_dir: cli
                    .out
                    .clone()
                    .unwrap_or_else(|| PathBuf::from(format!("out/{figure:?}").to_lowercase())),
                seed: cli.seed.unwrap_or(0),
                oscillators: *oscillators,
                coefficients: coefficients.as_ref().map(load_coefficients).transpose()?,
                cache_dir: cache_dir.clone(),
            };
            reproduce(*figure, &opts)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    match execute(&cli).context("hopfid failed") {
        Ok(out) if out.passed() => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("one or more checks failed");
            ExitCode::from(EXIT_CHECKS)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some()) {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
