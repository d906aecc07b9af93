//! `bnas`: search, train, evaluate and cost binary cell architectures.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error, 3 selftest failure.

mod checkpoint;
mod commands;
mod config;
mod dataio;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bnas", version, about = "Binary neural architecture search engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory with CIFAR binary batch files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Use the synthetic dataset generator instead of files.
    #[arg(long)]
    pub synthetic: bool,
    /// Weight/activation domains: bin-proposed, bin-full, bin-w-real-a, real.
    #[arg(long)]
    pub mode: Option<String>,
    /// Output directory (search/train) or file (cost).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for evaluation forward passes (training is always
    /// single-threaded for reproducibility).
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the progressive bilevel search; writes genotype.json and
    /// metrics.csv.
    Search {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a derived network (binary activations, real weights); writes a
    /// checkpoint and metrics.
    Train {
        /// Genotype JSON file.
        #[arg(long)]
        genotype: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a checkpoint; optionally binarize the weights first.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Swap convolutions to binary weights (packed kernels) before
        /// evaluating.
        #[arg(long)]
        binarize_weights: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Static FLOPs/BOPs report for a genotype or a bundled preset.
    Cost {
        /// Genotype JSON file (defaults to the bundled reference cell).
        #[arg(long)]
        genotype: Option<PathBuf>,
        /// One of: resnet18-stem, cifar-paper, imagenet-paper, toy.
        #[arg(long)]
        preset: Option<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the kernel bit-exactness and gradient-check suites.
    Selftest,
}

/// A command failure with its exit code.
pub enum Failure {
    /// Bad flags or configuration (exit 1).
    Usage(String),
    /// Anything that went wrong while running (exit 2).
    Runtime(String),
}

impl Failure {
    fn report(self) -> ExitCode {
        match self {
            Failure::Usage(msg) => {
                eprintln!("usage error: {}", msg);
                ExitCode::from(1)
            }
            Failure::Runtime(msg) => {
                eprintln!("error: {}", msg);
                ExitCode::from(2)
            }
        }
    }
}

impl From<bnas_core::Error> for Failure {
    fn from(e: bnas_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not failures.
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{}", err);
                return ExitCode::SUCCESS;
            }
            eprint!("{}", err);
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Search { common } => commands::search::run(&common),
        Command::Train { genotype, common } => commands::train::run(&genotype, &common),
        Command::Eval { checkpoint, binarize_weights, common } => {
            commands::eval::run(&checkpoint, binarize_weights, &common)
        }
        Command::Cost { genotype, preset, common } => {
            commands::cost::run(genotype.as_deref(), preset.as_deref(), &common)
        }
        Command::Selftest => return commands::selftest::run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => failure.report(),
    }
}
