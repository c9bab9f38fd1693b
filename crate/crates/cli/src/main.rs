mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use extremal::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

#[derive(Args)]
pub struct Common {
    /// Master seed; overrides the config's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory; overrides the config's.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Parser)]
#[command(name = "extremal", version, about = "Multiple stable integrals, their tails and a regenerative model")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw joint replicates of the configured integrals.
    Sample(commands::SampleArgs),
    /// Classify integrands against the moment conditions.
    CheckIntegrability(commands::IntegrabilityArgs),
    /// Fit the tail of one integral against its predicted constant.
    TailFit(commands::TailFitArgs),
    /// Fit the tail of a product of two integrals.
    ProductTail(commands::ProductTailArgs),
    /// Check extremal and full independence of two integrals.
    Independence(commands::IndependenceArgs),
    /// Simulate one path of the regenerative model and estimate its extremal index.
    RegenSim(commands::RegenArgs),
    /// Compare the blocks estimate with the candidate index over many paths.
    ExtremalIndex(commands::IndexArgs),
    /// Sweep memory parameters and compare normalizations of the running maximum.
    PhaseSweep(commands::SweepArgs),
    /// Run the acceptance criteria.
    Verify(commands::VerifyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let result = match &cli.command {
        Command::Sample(a) => commands::sample(a, c),
        Command::CheckIntegrability(a) => commands::check_integrability(a, c),
        Command::TailFit(a) => commands::tail_fit_cmd(a, c),
        Command::ProductTail(a) => commands::product_tail(a, c),
        Command::Independence(a) => commands::independence(a, c),
        Command::RegenSim(a) => commands::regen_sim(a, c),
        Command::ExtremalIndex(a) => commands::extremal_index(a, c),
        Command::PhaseSweep(a) => commands::sweep(a, c),
        Command::Verify(a) => commands::verify(a, c),
    };
    match result {
        Ok(o) => {
            println!("{} {}", if o.passed { "PASS" } else { "FAIL" }, o.summary);
            if o.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
