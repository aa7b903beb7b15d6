//! `qkf`: synthesize, simulate and verify quantum Kalman–Bucy filters.
//!
//! Exit codes: 0 pass, 1 input error, 2 constraint or grid error,
//! 3 numerical failure, 4 statistical failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "qkf",
    version,
    about = "Quantum Kalman-Bucy filter synthesis and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural constraints of a model and print a JSON report.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Integrate the Riccati equation; writes riccati.csv and synthesis.json.
    Synthesize {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Monte-Carlo comparison of the filter error with the Riccati trace;
    /// writes mc_summary.csv.
    Simulate {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        mc: McArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Chapman-Kolmogorov and Bochner sweeps over the filter's kernels.
    KernelsCheck {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the acceptance suite and print a JSON report.
    Selftest {
        /// Master seed for the Monte-Carlo checks.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report to DIR/selftest.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only these checks.
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<u32>>,
        /// Negative control: flip the sign of the gain.
        #[arg(long, hide = true)]
        tamper_gain_sign: bool,
    },
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Model file: general form or oscillator shorthand.
    #[arg(long)]
    model: PathBuf,
    /// Horizon; defaults to 3/γ for oscillators and 5 otherwise.
    #[arg(long)]
    t_end: Option<f64>,
    /// Riccati grid spacing.
    #[arg(long, default_value_t = 0.01)]
    step: f64,
}

#[derive(Args, Clone)]
struct McArgs {
    /// Euler-Maruyama step; must divide --step.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 20_000)]
    n_traj: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comparison times; default {0.5, 1, 2, 3}/γ for oscillators.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<f64>>,
    /// Write record_*.csv for the first COUNT trajectories.
    #[arg(long, value_name = "COUNT", num_args = 0..=1, default_missing_value = "1")]
    dump_records: Option<usize>,
    /// Also compare against the filter with gain (1 + EPS)K.
    #[arg(long, value_name = "EPS", allow_negative_numbers = true)]
    perturb_gain: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { model } => commands::validate(&model),
        Command::Synthesize { grid, out } => commands::synthesize(&grid.into(), &out),
        Command::Simulate { grid, mc, out } => commands::simulate(&grid.into(), &mc.into(), &out),
        Command::KernelsCheck { grid, seed } => commands::kernels_check(&grid.into(), seed),
        Command::Selftest {
            seed,
            out,
            criteria,
            tamper_gain_sign,
        } => commands::selftest(seed, out.as_deref(), criteria.as_deref(), tamper_gain_sign),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code as u8)
        }
    }
}

impl From<GridArgs> for commands::GridConfig {
    fn from(g: GridArgs) -> Self {
        Self {
            model: g.model,
            t_end: g.t_end,
            step: g.step,
        }
    }
}

impl From<McArgs> for commands::McConfig {
    fn from(m: McArgs) -> Self {
        Self {
            dt: m.dt,
            n_traj: m.n_traj,
            seed: m.seed,
            checkpoints: m.checkpoints,
            dump_records: m.dump_records.unwrap_or(0),
            perturb_gain: m.perturb_gain,
        }
    }
}
