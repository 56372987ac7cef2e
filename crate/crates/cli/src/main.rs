//! Command-line driver for the failure-model workflow.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "failmodel",
    version,
    about = "Failure CDFs from pulse-test data and expert anchors"
)]
struct Cli {
    /// Pipeline configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CampaignArgs {
    /// Shot CSV: device_id,shot_index,voltage_kv,outcome
    pub campaign: PathBuf,
    /// Damage normalizer in kV; required when no shot failed.
    #[arg(long)]
    pub normalizer_kv: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct PriorArgs {
    /// γ* from `fit-prior`.
    #[arg(long, conflicts_with = "sme")]
    pub prior: Option<PathBuf>,
    /// SME anchors; fits the prior first when no --prior is given.
    #[arg(long)]
    pub sme: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ErrorSource {
    Dkw,
    FiniteTest,
    Sme,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a campaign and print its summary.
    Ingest(CampaignArgs),
    /// Least-squares Gaussian fit with a DKW band.
    Baseline {
        #[command(flatten)]
        data: CampaignArgs,
        /// Band confidence level.
        #[arg(long, default_value_t = 0.9)]
        level: f64,
    },
    /// Fit γ* to SME anchors by Bayesian optimization.
    FitPrior {
        #[arg(long)]
        sme: PathBuf,
    },
    /// Posterior failure CDF for a campaign.
    Infer {
        #[command(flatten)]
        data: CampaignArgs,
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long)]
        chains: Option<usize>,
        /// Also write every retained draw to chains.csv.
        #[arg(long)]
        write_chains: bool,
    },
    /// Banded failure model for one error source.
    Error {
        #[command(flatten)]
        data: CampaignArgs,
        #[command(flatten)]
        prior: PriorArgs,
        #[arg(long, value_enum)]
        source: ErrorSource,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Draw pass/fail outcomes for a list of voltages.
    Sample {
        /// Failure model JSON.
        #[arg(long)]
        model: PathBuf,
        /// One voltage (kV) per line; a non-numeric first line is a header.
        #[arg(long)]
        voltages: PathBuf,
    },
    /// Update a stored posterior with new shots.
    Update {
        /// Posterior state from `infer` or a previous `update`.
        #[arg(long)]
        state: PathBuf,
        /// New shot CSV.
        campaign: PathBuf,
        #[arg(long)]
        chains: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
