//! `brw`: spectral analysis and simulation of branching random walks with
//! a finite set of branching sources.

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use commands::Output;
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "brw", version, about = "Spectra, critical intensities and simulations of branching random walks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed; overrides `oracle.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "BRW_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Tabulate G_lambda(x) over the lambda grid and displacements.
    Green,
    /// Eigenvalue curves gamma_i(lambda) of the source Green matrix.
    GammaCurve,
    /// Positive spectrum at one beta or along a beta sweep.
    Spectrum,
    /// Critical intensities beta_c and beta_c1 with gap bounds.
    Critical,
    /// Closed forms for sources at the simplex configuration.
    Simplex,
    /// Monte Carlo simulation of particle counts.
    Simulate,
    /// Growth rate from the Green matrix, a truncated box, the mean-field
    /// evolution and simulation, side by side.
    OracleCompare,
}

fn run(cli: &Cli) -> Result<String, CliError> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::config("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let path = cli.config.as_ref().ok_or_else(|| CliError::config("--config is required"))?;
    let raw = config::load(path)?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let resolved = config::resolve(&raw, &base, cli.seed)?;
    let out = Output { dir: cli.out.clone().or(raw.output.dir.clone()).unwrap_or_else(|| PathBuf::from(".")) };
    match cli.command {
        Command::Green => commands::green(&resolved, &out),
        Command::GammaCurve => commands::gamma_curve_cmd(&resolved, &out),
        Command::Spectrum => commands::spectrum(&resolved, &out),
        Command::Critical => commands::critical(&resolved, &out),
        Command::Simplex => commands::simplex(&resolved, &out),
        Command::Simulate => commands::simulate(&resolved, &out),
        Command::OracleCompare => commands::oracle_compare(&resolved, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("brw: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
