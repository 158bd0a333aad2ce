mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Thread count for the parallel kernels; `RAYON_NUM_THREADS` also works.
const THREADS_ENV: &str = "HYPERFLOW_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hyperflow", version, about = "Hyperbolic geometry, Ricci-DeTurck flow and flow-assisted training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve a bump-perturbed hyperbolic metric and fit its decay rate.
    Flow(Common),
    /// Check Ricci and scalar curvature of the configured metric on the grid.
    Curvature(Common),
    /// Compare end-to-end training gradients with finite differences.
    Gradcheck(Common),
    /// Train one arm and write per-epoch metrics.
    Train(Common),
    /// Train both arms over several seeds and write a paired report.
    Compare(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set alpha=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> CliResult<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.set, self.seed, self.out.clone())
    }
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Flow(c) => commands::flow(&c.load()?),
        Command::Curvature(c) => commands::curvature_check(&c.load()?),
        Command::Gradcheck(c) => commands::gradcheck(&c.load()?),
        Command::Train(c) => commands::train(&c.load()?),
        Command::Compare(c) => commands::compare(&c.load()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
