//! `nlspd`: simulate detector tomography runs, reconstruct POVMs, fit the nonlinear model
//! and emit figure series.
//!
//! Exit status is 0 on success, 1 when an input is rejected and 2 on an internal failure.

mod commands;
mod failure;
mod figures;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nlspd::modelfit::{DEFAULT_MAX_ORDER, DEFAULT_PRUNE_THRESHOLD};
use nlspd::simulator::REFERENCE_TRIALS;

use crate::failure::Failure;
use crate::figures::{FigureId, FigureRequest};
use crate::output::{publish, RunManifest};

#[derive(Parser, Debug)]
#[command(
    name = "nlspd",
    version,
    about = "Nonlinear single-photon detector tomography toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a tomography run from a JSON experiment document and write probe CSV.
    Simulate { config: PathBuf, out: PathBuf },
    /// Reconstruct the click POVM from probe CSV and write it as JSON.
    Reconstruct(ReconstructArgs),
    /// Fit the nonlinear model to probe CSV, prune insignificant orders and write the report.
    Fit(FitArgs),
    /// Print fidelity and elementwise gaps between two POVM or parameter JSON files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Truncation used when both operands are parameter sets.
        #[arg(long, default_value_t = 100)]
        truncation: usize,
    },
    /// Write the data series of a figure as CSV.
    Figure {
        #[arg(value_enum)]
        id: FigureId,
        out: PathBuf,
        /// Bias current in microamperes (25, 20 or 16); defaults to 20 for fig3b, 25 otherwise.
        #[arg(long)]
        current: Option<u32>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = REFERENCE_TRIALS)]
        trials: u64,
    },
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    /// Photon-number truncation; by default the largest probe is covered to a tail of 1e-12.
    #[arg(long)]
    pub truncation: Option<usize>,
    /// Weight of the nearest-neighbour smoothing penalty; defaults to 1e-3 per probe.
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Rescale the probes so the detector clicks with probability 0.95 at mean 30, and record
    /// the factor as "k".
    #[arg(long)]
    pub scale_to_95: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_ORDER)]
    pub max_order: usize,
    #[arg(long, default_value_t = DEFAULT_PRUNE_THRESHOLD)]
    pub prune_threshold: f64,
}

fn figure_command(
    id: FigureId,
    out: &std::path::Path,
    current: Option<u32>,
    seed: u64,
    trials: u64,
) -> Result<(), Failure> {
    let request = FigureRequest {
        id,
        current_ua: current.unwrap_or(id.default_current()),
        seed,
        trials,
    };
    let series = figures::render(&request)?;
    let manifest = RunManifest::new("figure")
        .parameter("figure", id.name())
        .parameter("current_ua", request.current_ua)
        .parameter("trials", trials)
        .seed(seed);
    publish(out, series.as_bytes(), manifest)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, out } => commands::simulate_command(&config, &out),
        Command::Reconstruct(args) => commands::reconstruct_command(&args),
        Command::Fit(args) => commands::fit_command(&args),
        Command::Compare { a, b, truncation } => commands::compare_command(&a, &b, truncation),
        Command::Figure {
            id,
            out,
            current,
            seed,
            trials,
        } => figure_command(id, &out, current, seed, trials),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            failure.exit_code()
        }
    }
}
