//! `blconst` command-line interface.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success (`converged` or `boundary_plateau`, all certificates passed) |
//! | 1 | unreadable input, parse or validation error |
//! | 2 | the constant diverges |
//! | 3 | the optimiser could not decide |
//! | 4 | at least one certificate trace failed |

mod commands;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use blconst::datum::NumericPolicy;

#[derive(Parser, Debug)]
#[command(
    name = "blconst",
    version,
    about = "Brascamp–Lieb constants and experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Master seed; overrides the seed of a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Convergence tolerance of the optimiser.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long = "max-iter", global = true)]
    pub max_iter: Option<usize>,
}

impl GlobalArgs {
    pub fn policy(&self) -> NumericPolicy {
        let mut p = NumericPolicy::default();
        if let Some(t) = self.tol {
            p.conv_tol = t;
        }
        if let Some(m) = self.max_iter {
            p.max_iter = m;
        }
        p
    }

    pub fn seed_or(&self, fallback: u64) -> u64 {
        self.seed.unwrap_or(fallback)
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Global,
    UnitBall,
    Partial,
}

#[derive(Args, Debug, Clone)]
pub struct LocalizationArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Global)]
    pub mode: ModeArg,
    /// Diagonal of `G` for `--mode partial`, comma separated.
    #[arg(long = "g-diag", value_delimiter = ',', allow_negative_numbers = true)]
    pub g_diag: Option<Vec<f64>>,
    /// JSON file holding `G` as a list of rows, for `--mode partial`.
    #[arg(long = "g", conflicts_with = "g_diag")]
    pub g_file: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Optimise the Gaussian quotient.
    Compute {
        #[arg(long)]
        datum: PathBuf,
        #[command(flatten)]
        loc: LocalizationArgs,
    },
    /// Search for subspaces violating the finiteness conditions.
    Finiteness {
        #[arg(long)]
        datum: PathBuf,
        #[command(flatten)]
        loc: LocalizationArgs,
        /// Lattice rounds and random candidates per dimension.
        #[arg(long, default_value_t = 8)]
        budget: usize,
    },
    /// Recompute the constant under random perturbations of the maps.
    Stability {
        #[arg(long)]
        datum: PathBuf,
        #[arg(long)]
        radius: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Check the frame-based determinant bounds on Gaussian inputs.
    Certify {
        #[arg(long)]
        datum: PathBuf,
        /// Frame samples for estimating the wedge constant.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Inputs: `identity`, `random:<count>` or `scalar:<v1>,<v2>,...`.
        #[arg(long = "A", default_value = "random:100")]
        inputs: String,
        #[command(flatten)]
        loc: LocalizationArgs,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 0.05)]
        deltahat: f64,
    },
    /// Multilinear Kakeya quadrature experiment.
    Kakeya {
        #[arg(long)]
        config: PathBuf,
    },
    /// Nonlinear Brascamp–Lieb sweep.
    Nonlinear {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok((outcome, rendered)) => match render::emit(&cli.global, &rendered) {
            Ok(()) => ExitCode::from(outcome.code()),
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
