mod commands;
mod config;
mod exit;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};
use exit::{Failure, INPUT};

#[derive(Parser)]
#[command(name = "spi", version, about = "Interpolation of periodically correlated isotropic fields on the sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal estimate of a functional from observations around a gap.
    Interpolate(Common),
    /// Least-favourable densities of an uncertainty class and the minimax estimate.
    Minimax(Common),
    /// Simulate harmonic coefficients (and the field itself for n = 2, 3).
    Simulate(Common),
    /// Check a solution against the projection oracle and Monte Carlo.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON, schema "spi-run/1").
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Frequency grid size, a power of two >= 64.
    #[arg(long)]
    grid: Option<usize>,
    /// Observation window J on each side of the gap.
    #[arg(long)]
    window: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    emit_plots: bool,
}

fn init_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("SPI_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::input(format!("SPI_THREADS: expected a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::input(format!("SPI_THREADS: {e}")))
}

fn run(command: Command) -> Result<commands::Outcome, Failure> {
    init_threads()?;
    let (name, common) = match &command {
        Command::Interpolate(c) => ("interpolate", c),
        Command::Minimax(c) => ("minimax", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Validate(c) => ("validate", c),
    };
    let overrides = Overrides {
        seed: common.seed,
        grid: common.grid,
        window: common.window,
        out: common.out.clone(),
        emit_plots: common.emit_plots,
    };
    let cfg = RunConfig::load(&common.config, name, &overrides)?;
    match command {
        Command::Interpolate(_) => commands::run_interpolate(&cfg),
        Command::Minimax(_) => commands::run_minimax(&cfg),
        Command::Simulate(_) => commands::run_simulate(&cfg),
        Command::Validate(_) => commands::run_validate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { INPUT as u8 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
