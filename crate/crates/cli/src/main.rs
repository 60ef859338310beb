mod commands;
mod config;
mod expr;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::InvalidInput;

/// Space-time homogenization lab for nonlinear diffusion.
#[derive(Debug, Parser)]
#[command(name = "homoglab", version)]
pub struct Cli {
    /// Worker threads (the HOMOGLAB_THREADS environment variable wins).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a coefficient for symmetry, ellipticity and periodicity.
    ValidateCoeff(CoeffArgs),
    /// Solve the oscillating problem at one ε and write the trajectory.
    SolveEps(SolveArgs),
    /// Solve the homogenized problem on the grid of one ε.
    SolveHom(SolveArgs),
    /// Solve the cell problems of one regime and report diagnostics.
    Cell(CellArgs),
    /// Print the homogenized matrix of one regime.
    Ahom(CellArgs),
    /// Corrector functionals at a single ε.
    Correctors(CorrectorArgs),
    /// Full ε sweep: report.json and report.csv.
    Study(StudyArgs),
    /// List the shipped scenarios, or print one.
    Scenarios {
        /// Print this scenario's configuration.
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct CoeffArgs {
    /// Named coefficient family.
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    pub coeff: Option<String>,
    /// Tabulated coefficient CSV.
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Family parameter as NAME=VALUE; repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Lattice points per axis for the checks.
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct CellArgs {
    #[command(flatten)]
    pub coeff: CoeffArgs,
    /// subcritical, supercritical, critical-fde or critical-pme.
    #[arg(long)]
    pub regime: String,
    /// Critical parameter: c = |u₀|^{1−p}/p (critical-fde) or
    /// κ = p|u₀|^{p−1} (critical-pme).
    #[arg(long)]
    pub parameter: Option<f64>,
    /// Cell grid intervals per axis.
    #[arg(long, default_value_t = 64)]
    pub ny: usize,
    /// Cell grid time slabs.
    #[arg(long, default_value_t = 64)]
    pub ns: usize,
    /// Also write the diagnostics as JSON into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Shipped scenario name.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub scenario: Option<String>,
    /// Configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: the config's `output`, else out/<name>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// ε fixing the grid (default: the first of the configured list).
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CorrectorArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Also write both trajectories and the unfolded gradient.
    #[arg(long)]
    pub dump: bool,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub source: SourceArgs,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_USAGE: u8 = 64;

/// Exit status for a failed command.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InvalidInput>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<homoglab::Error>() {
            return if e.is_validation() { EXIT_VALIDATION } else { EXIT_SOLVER };
        }
    }
    EXIT_SOLVER
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
