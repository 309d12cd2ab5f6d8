//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mfe_core::config::{ExcessReturnConvention, PercentileConvention};

#[derive(Debug, Clone, Parser)]
#[command(
    name = "mfe",
    version,
    about = "Mean-field market-clearing equilibrium on a binomial lattice"
)]
pub struct Cli {
    /// Worker threads for the solver and Monte Carlo stages.
    #[arg(long, global = true, env = "MFE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Solve for the equilibrium and write the p and phi tables.
    Solve(CommonArgs),
    /// Solve and write distributions, expected paths, excess returns and volumes.
    Analyze(CommonArgs),
    /// Measure the finite-population excess demand across population sizes.
    Converge(ConvergeArgs),
    /// Compare the price distributions of two scenarios on the same lattice.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario JSON file or bundled preset name.
    #[arg(long)]
    pub scenario: String,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub percentile_convention: Option<PercentileArg>,
    #[arg(long, value_enum)]
    pub excess_return_convention: Option<ExcessReturnArg>,
    /// Index the stock by full price path (exact for path-dependent payoffs).
    #[arg(long)]
    pub path_mode: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Population sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Decision step at which excess demand is measured.
    #[arg(long)]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Second scenario (file or preset), compared against `--scenario`.
    #[arg(long)]
    pub against: String,
    /// Lower and upper price thresholds for tail masses, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub tail_thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PercentileArg {
    NodeIndex,
    Probability,
}

impl From<PercentileArg> for PercentileConvention {
    fn from(a: PercentileArg) -> Self {
        match a {
            PercentileArg::NodeIndex => PercentileConvention::NodeIndex,
            PercentileArg::Probability => PercentileConvention::Probability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExcessReturnArg {
    Log,
    Simple,
}

impl From<ExcessReturnArg> for ExcessReturnConvention {
    fn from(a: ExcessReturnArg) -> Self {
        match a {
            ExcessReturnArg::Log => ExcessReturnConvention::Log,
            ExcessReturnArg::Simple => ExcessReturnConvention::Simple,
        }
    }
}
