//! `woodpecker` command line: dataset building, training, evaluation,
//! detection, annotation and debugging subcommands.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "woodpecker", version, about = "Woodpecker drumming detector")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed for synthesis, shuffling and initialization.
    #[arg(long, global = true, env = "WOODPECKER_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory (index.jsonl + *.wpsg).
    #[arg(long, visible_alias = "out", global = true, env = "WOODPECKER_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Model weights file (.wpnn).
    #[arg(long, global = true, env = "WOODPECKER_MODEL")]
    pub model: Option<PathBuf>,
    /// 0 = warnings only, 1 = info, 2 = debug, 3 = trace.
    #[arg(short = 'v', long, global = true, env = "WOODPECKER_VERBOSITY", default_value_t = 1)]
    pub verbosity: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelArg {
    Drumming,
    Other,
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled dataset into --out.
    Synth {
        /// Number of spectrogram files.
        #[arg(long, default_value_t = 750)]
        n: usize,
        /// Fraction of drumming examples.
        #[arg(long, default_value_t = 0.5)]
        positive_fraction: f64,
        /// Fraction held out for validation, stratified by label.
        #[arg(long, default_value_t = 0.2)]
        validation_fraction: f64,
    },
    /// Cut a WAV recording into labeled 3 s spectrograms (1 s hop) in --out.
    Import {
        /// Mono or multichannel PCM WAV file.
        #[arg(long)]
        wav: PathBuf,
        /// Label given to every window cut from the file.
        #[arg(long, value_enum)]
        label: LabelArg,
    },
    /// Add a WAV recording to --out as unlabeled spectrograms for annotation.
    Capture {
        /// Mono or multichannel PCM WAV file.
        #[arg(long)]
        wav: PathBuf,
    },
    /// Train the reference model on --dataset and write --model.
    Train {
        /// Passes over the training split.
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        /// Samples per Adam step.
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        /// Adam step size.
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// Dropout rate applied before the dense layers.
        #[arg(long, default_value_t = 0.2)]
        dropout: f64,
        /// Also write the per-epoch history as JSON here.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Report accuracy, confusion matrix and precision/recall as JSON.
    Eval {
        /// Which part of the dataset to score.
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
    },
    /// Run the streaming detector over a WAV file.
    Detect {
        /// Recording to stream through the detector.
        #[arg(long)]
        wav: PathBuf,
        /// POST a JSON payload here on every trigger.
        #[arg(long, env = "WOODPECKER_WEBHOOK")]
        webhook: Option<String>,
        /// Write events as JSON Lines to this file instead of stdout.
        #[arg(long)]
        json_events: Option<PathBuf>,
        /// Print status lines to stderr as the detector runs.
        #[arg(long)]
        status: bool,
        /// Drumming probability counted as a detection (inclusive).
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        /// Consecutive detections needed to trigger.
        #[arg(long, default_value_t = 2)]
        consecutive: usize,
        /// Seconds after a trigger during which no trigger fires.
        #[arg(long, default_value_t = 10.0)]
        cooldown_s: f64,
    },
    /// Serve the annotation API (and optional UI assets) for --dataset.
    Annotate {
        /// Address to listen on.
        #[arg(long, default_value = "127.0.0.1:8077")]
        bind: SocketAddr,
        /// Directory of built UI assets to serve at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Print analyzer frames of a WAV file as CSV.
    Bands {
        /// Recording to analyze.
        wav: PathBuf,
    },
    /// Time z-score and inference over random windows.
    Bench {
        /// Number of timed windows.
        #[arg(long, default_value_t = 100)]
        runs: usize,
    },
}

/// Errors caused by how the command was invoked rather than by its data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .parse_env("WOODPECKER_LOG")
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.global.verbosity);
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("error: {u}");
                ExitCode::from(EXIT_USAGE)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_DATA)
            }
        }
    }
}
