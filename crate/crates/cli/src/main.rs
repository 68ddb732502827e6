//! `npi`: instance generation, scripted teachers, training, evaluation,
//! sweeps, trace rendering and self-checks behind one command.

mod commands;
mod run;

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use npi_train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("verification failed in {0} suite(s)")]
    Verify(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// Usage errors exit with 2 through the argument parser.
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::MissingCheckpoint(_) => 4,
            CliError::Verify(_) => 5,
            CliError::Io(_) | CliError::Other(_) => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            TrainError::Io(e) => CliError::Io(e),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<npi_neural::NeuralError> for CliError {
    fn from(e: npi_neural::NeuralError) -> Self {
        match e {
            npi_neural::NeuralError::Io(e) => CliError::Io(e),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<npi_core::vm::VmError> for CliError {
    fn from(e: npi_core::vm::VmError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "npi", version, about = "Instruction-set program induction: teachers, training and evaluation")]
#[command(after_long_help = config_help())]
pub struct Cli {
    /// Root seed for every random choice; a fresh one is drawn and recorded when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Parent directory of run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub runs_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

fn config_help() -> String {
    format!(
        "Training config files hold `key = value` lines (`#` starts a comment); \
         `--set key=value` overrides a key. Keys and defaults:\n\n{}",
        npi_train::TrainConfig::default()
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Sort,
    Search,
    Knapsack,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write random instances, one line each.
    Gen(GenArgs),
    /// Evaluate a scripted teacher.
    Teach(TeachArgs),
    /// Behavior cloning on teacher traces.
    TrainBc(ConfigArgs),
    /// Policy gradient with optional imitation.
    TrainRl(TrainRlArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Hyperparameter grid over learning rate, discount, entropy weight and n-step length.
    Sweep(SweepArgs),
    /// Render one episode step by step.
    Trace(TraceArgs),
    /// Run the built-in property suites.
    Verify,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    pub task: TaskArg,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub sizes: Vec<usize>,
    /// Instances per size.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Search query sampler: dense, mixed, member-only or non-member-only.
    #[arg(long, default_value = "dense")]
    pub query_mode: String,
}

#[derive(Debug, Args)]
pub struct TeachArgs {
    pub task: TaskArg,
    pub teacher: String,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Step cap rule: n^2, 10n^2, <m>n, an absolute count or unlimited.
    #[arg(long)]
    pub cap: Option<String>,
    /// Knapsack step budget per item; shorthand for `--cap <m>n`.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, default_value = "dense")]
    pub query_mode: String,
    /// Rendered traces to keep per size.
    #[arg(long, default_value_t = 0)]
    pub traces: usize,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Training config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainRlArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint to start from, such as a cloned policy.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Mean-length goal for one size as `SIZE=LENGTH`, repeatable; misses are reported as shortfalls.
    #[arg(long = "target", value_name = "SIZE=LENGTH")]
    pub targets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long)]
    pub cap: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "1e-4,1e-5")]
    pub lrs: Vec<f64>,
    /// Defaults to the config's discount.
    #[arg(long, value_delimiter = ',')]
    pub gammas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1e-3")]
    pub entropies: Vec<f64>,
    /// Defaults to the config's n-step length.
    #[arg(long, value_delimiter = ',')]
    pub n_steps: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Updates per run; defaults to the config's.
    #[arg(long)]
    pub updates: Option<usize>,
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    pub task: TaskArg,
    /// Scripted agent to run.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    pub teacher: Option<String>,
    /// Learned agent to run greedily.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    #[arg(long)]
    pub cap: Option<String>,
    #[arg(long, default_value = "dense")]
    pub query_mode: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
