//! `hdpid`: simulate encounter data, fit the identity model, and score it.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdpid::sampler::ProtocolMode;

mod commands;
mod config;
mod manifest;
mod snapshots;

use config::ConfigFile;

#[derive(Debug, Parser)]
#[command(
    name = "hdpid",
    version,
    about = "Open-world identity inference with a hierarchical Dirichlet process"
)]
struct Cli {
    /// Flat TOML file of hyperparameters and run settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scenario {
    /// Social encounters across contexts.
    Encounters,
    /// Known and unknown people, with a test split.
    Unknown,
    /// Acquainted, familiar and stranger groups, with a test split.
    Labelling,
    /// Fully labelled identities with a fraction of flipped names.
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Online,
    Batch,
    Offline,
}

impl From<Protocol> for ProtocolMode {
    fn from(p: Protocol) -> Self {
        match p {
            Protocol::Online => ProtocolMode::Online,
            Protocol::Batch => ProtocolMode::Batch,
            Protocol::Offline => ProtocolMode::Offline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    /// Nearest neighbour over the labelled training embeddings.
    Nn,
    /// Label propagation over training and query embeddings.
    Lp,
}

#[derive(Debug, Clone, Args)]
struct FitArgs {
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Keep every n-th sweep after burn-in.
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long, value_enum)]
    protocol: Option<Protocol>,
    /// Treat every frame as the same context.
    #[arg(long)]
    no_context: bool,
    /// Suppress per-sweep progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset manifest.
    Simulate {
        #[arg(long, value_enum, default_value = "encounters")]
        scenario: Scenario,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Destination of the test split, for scenarios that have one.
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Run the Gibbs sampler and store chain snapshots.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unknown-person probabilities, names and frame contexts for a query set.
    Predict {
        /// Training manifest the snapshots were fitted to.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ROC, AUC and MAP accuracy of unknown-person detection.
    EvalUnknown {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjusted Rand index of the fitted clustering and its traces.
    EvalCluster {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Name-prediction accuracy per group against both baselines.
    EvalLabel {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predictions of a baseline classifier.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long, value_enum)]
        method: Baseline,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure to write results, as opposed to bad input.
#[derive(Debug)]
struct OutputError(String);

impl std::fmt::Display for OutputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for OutputError {}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = ConfigFile::load(cli.config.as_deref())?;
    let seed = cli.seed;
    match cli.command {
        Command::Simulate {
            scenario,
            out,
            test_out,
        } => commands::simulate(&config, seed, scenario, out.as_deref(), test_out.as_deref()),
        Command::Fit { data, fit, out } => commands::fit(&config, seed, &data, &fit, out.as_deref()),
        Command::Predict {
            data,
            snapshots,
            query,
            out,
        } => commands::predict(&data, &snapshots, &query, out.as_deref()),
        Command::EvalUnknown {
            train,
            test,
            snapshots,
            out,
        } => commands::eval_unknown(&train, &test, &snapshots, out.as_deref()),
        Command::EvalCluster { data, snapshots, out } => commands::eval_cluster(&data, &snapshots, out.as_deref()),
        Command::EvalLabel {
            train,
            test,
            snapshots,
            out,
        } => commands::eval_label(&train, &test, &snapshots, out.as_deref()),
        Command::Baseline {
            data,
            query,
            method,
            out,
        } => commands::baseline(&data, &query, method, out.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let internal = err
        .chain()
        .any(|e| e.is::<OutputError>() || matches!(e.downcast_ref::<hdpid::Error>(), Some(hdpid::Error::Invariant(_))));
    if internal {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
