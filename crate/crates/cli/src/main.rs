//! `shed`: entropy extraction, synthetic data, training, evaluation and baselines.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status for a malformed command line.
const EXIT_USAGE: u8 = 64;
const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "shed", version, about = "Hallucination detection from token entropy sequences")]
struct Cli {
    /// `key = value` settings file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for every random choice; overrides the config file
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct InOut {
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert top-k probability dumps into entropy records
    ExtractEntropy {
        #[command(flatten)]
        io: InOut,
        #[arg(long, default_value_t = 64)]
        max_len: usize,
    },
    /// Write a synthetic labeled dataset
    GenSynth {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train the sequence classifier on records not tagged `test`
    Train {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        /// Where to write the trained model
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Per-epoch CSV report
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Evaluate a model on `test` records (all records when none are tagged)
    Eval {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Metrics CSV
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Per-record probabilities and attention as JSONL
    Predict {
        #[command(flatten)]
        io: InOut,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
    },
    /// Discrete semantic entropy for each response set
    BaselineSe {
        #[command(flatten)]
        io: InOut,
        /// exact, normalized, or a command line speaking the adapter protocol
        #[arg(long, default_value = "exact")]
        oracle: String,
        /// Also emit `predicted = score > threshold`
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Fit the macro-F1-optimal cutoff on labeled scores
    FitThreshold {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Train a linear probe on feature records
    TrainProbe {
        #[command(flatten)]
        io: InOut,
        /// Read entropy records and use [mean, max, first-8 mean] as features
        #[arg(long)]
        summary_features: bool,
        /// Learning rate (probe default 1e-2)
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Mean attention weight per position as CSV
    AttentionExport {
        #[command(flatten)]
        io: InOut,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_VALIDATION })
        }
    }
}
