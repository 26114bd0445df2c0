//! Library behind the `transferma` command: argument definitions, the
//! subcommands, run manifests and fitted-model export.

pub mod commands;
pub mod manifest;
pub mod model;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use transferma_core::experiments::Figure;
use transferma_core::simgen::Example;
use transferma_core::{EdgeFamily, Error, Init};

/// Exit status for each failure class.
pub mod exit {
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const NUMERICAL: u8 = 4;
    pub const INVALID_INPUT: u8 = 5;
    pub const WORKER: u8 = 6;
}

#[derive(Debug, Parser)]
#[command(name = "transferma", version, about = "Transfer learning for multilayer link prediction by model averaging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate simulated datasets with their ground truth.
    Simulate(SimulateArgs),
    /// Fit all candidates, choose weights by cross-validation and predict the target's missing pairs.
    Run(RunArgs),
    /// Score predictions against ground truth (SMPR) or held-out values (SMPE).
    Eval(EvalArgs),
    /// Run the sweep behind one simulation figure and write its series.
    Reproduce(ReproduceArgs),
    /// Re-run the job recorded in a manifest.
    Replay(ReplayArgs),
    /// Fit one layer at one latent dimension and export the parameters.
    Fit(FitArgs),
    /// Hide a random fraction of the target's observed pairs for SMPE evaluation.
    Holdout(HoldoutArgs),
    /// Serve fit requests on stdin/stdout (used by `run --mode workers`).
    #[command(hide = true)]
    Worker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Inprocess,
    Workers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Spectral,
    Random,
}

impl From<InitArg> for Init {
    fn from(v: InitArg) -> Self {
        match v {
            InitArg::Spectral => Init::SpectralWarmStart,
            InitArg::Random => Init::RandomGaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Logistic,
}

impl From<FamilyArg> for EdgeFamily {
    fn from(v: FamilyArg) -> Self {
        match v {
            FamilyArg::Gaussian => EdgeFamily::GaussianIdentity,
            FamilyArg::Logistic => EdgeFamily::BernoulliLogistic,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML with the scenario fields).
    #[arg(long, conflicts_with = "example", required_unless_present = "example")]
    pub scenario: Option<PathBuf>,
    /// Built-in baseline scenario instead of a file.
    #[arg(long, value_parser = parse_example)]
    pub example: Option<Example>,
    /// Seed for the built-in scenario.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    #[arg(long, default_value_t = 1)]
    pub replicates: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Edge-list file; layer 1 is the target.
    #[arg(long)]
    pub data: PathBuf,
    /// Candidate latent dimensions, e.g. 1,2,3.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    /// Number of cross-validation folds.
    #[arg(long = "k", alias = "K", default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "inprocess")]
    pub mode: Mode,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = "TRANSFERMA_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, value_enum, default_value = "spectral")]
    pub init: InitArg,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    /// Worker program for `--mode workers`; defaults to this executable.
    #[arg(long)]
    pub worker: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions table (`i,j,prediction`).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Ground-truth sidecar; selects SMPR against layer 1 means.
    #[arg(long, conflicts_with = "heldout", required_unless_present = "heldout")]
    pub truth: Option<PathBuf>,
    /// Held-out values (`i,j,value`); selects SMPE.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Dataset the predictions were made for; checks they cover exactly its missing target pairs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Metric table to append to.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "")]
    pub scenario: String,
    #[arg(long, default_value = "Transfer-MA")]
    pub method: String,
    #[arg(long, default_value_t = 0)]
    pub replicate: u32,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Figure id: 1a 1b 1c 1d 1e 2 3 4 5.
    #[arg(long, value_parser = parse_figure)]
    pub example: Figure,
    #[arg(long, default_value_t = 100)]
    pub replicates: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = "TRANSFERMA_THREADS")]
    pub threads: Option<usize>,
    /// Edge family for Examples 1 and 2.
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "TRANSFERMA_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Layer to fit, 1-based.
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "spectral")]
    pub init: InitArg,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    /// Model file to write (TOML).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HoldoutArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Fraction of the target's observed pairs to hide.
    #[arg(long, default_value_t = 0.25)]
    pub rate: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory for `dataset.txt`, `heldout.csv` and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_example(s: &str) -> Result<Example, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_figure(s: &str) -> Result<Figure, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Default pool size: the environment variable, else the machine's parallelism.
pub fn thread_count(requested: Option<usize>) -> usize {
    requested
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => exit::IO,
        Error::NumericalFailure { .. } | Error::SolverFailure { .. } => exit::NUMERICAL,
        Error::CandidateFit { source, .. } => exit_code(source),
        Error::Dispatch { .. } | Error::Protocol(_) => exit::WORKER,
        Error::InvalidInput(_) | Error::IncompleteInput(_) | Error::Parse { .. } => exit::INVALID_INPUT,
    }
}

/// Parses the process arguments, runs the subcommand and maps failures to exit codes.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Run(args) => commands::run(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Reproduce(args) => commands::reproduce(&args),
        Command::Replay(args) => commands::replay(&args),
        Command::Fit(args) => commands::fit(&args),
        Command::Holdout(args) => commands::holdout(&args),
        Command::Worker => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            transferma_core::pipeline::serve(stdin.lock(), stdout.lock())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("transferma: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
