//! `autotag` command-line interface.
//!
//! Every command that writes artifacts needs `--out DIR` and leaves a
//! `manifest.json` there. Settings resolve as flag, then `--config` file
//! entry, then built-in default.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use settings::{List, Switch};

#[derive(Parser, Debug)]
#[command(
    name = "autotag",
    version,
    about = "Dense-retrieval auto-tagging experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// Seed for every random choice in the run
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Flat `key = value` config file; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Repeat for more log output
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Record wall-clock time in the manifest
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus directory
    Synth(SynthArgs),
    /// Pretrain both towers on a passage/question corpus
    Pretrain(PretrainArgs),
    /// Train the bi-encoder and build the tag index
    Train(TrainArgs),
    /// Evaluate the model and baselines
    Eval(EvalArgs),
    /// Print the top tags for a query
    Retrieve(RetrieveArgs),
    /// Finite-difference check of the encoder gradients
    Gradcheck(GradcheckArgs),
    /// Merge report JSON files into a K-sweep CSV
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub tags: Option<usize>,
    #[arg(long)]
    pub contexts: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Mean gold tags per context
    #[arg(long)]
    pub labels: Option<f64>,
    #[arg(long)]
    pub zipf: Option<f64>,
    /// Tokens per context
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub name_salience: Option<f64>,
    /// Tags kept out of the train split
    #[arg(long)]
    pub zero_tags: Option<usize>,
    /// `tagging` or `qa`
    #[arg(long)]
    pub kind: Option<commands::SynthKind>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub width: Option<usize>,
    /// `mean` or `cls_slot`
    #[arg(long)]
    pub pooling: Option<autotag::encoder::Pooling>,
    #[arg(long)]
    pub score_scale: Option<f64>,
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Contexts per batch
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Passage/question corpus directory
    #[arg(long)]
    pub qa: PathBuf,
    /// Tagging corpus whose words join the vocabulary
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Cross-encoded augmentation rows, `on` or `off`
    #[arg(long)]
    pub ceaa: Option<Switch>,
    /// Negative concatenations per context
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Score augmented rows against every column
    #[arg(long)]
    pub full_matrix: Option<Switch>,
    /// Start from a pretrained checkpoint
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Keep one gold tag per train example
    #[arg(long)]
    pub single_label: Option<Switch>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Defaults to `index.bin` next to the model
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Comma-separated cutoffs
    #[arg(long)]
    pub k: Option<List<usize>>,
    /// `standard`, `single-to-multi` or `buckets`
    #[arg(long)]
    pub protocol: Option<commands::Protocol>,
    /// Comma-separated subset of `bm25,classifier`
    #[arg(long)]
    pub baselines: Option<List<commands::Baseline>>,
    /// `train`, `validation` or `test`
    #[arg(long)]
    pub split: Option<autotag::corpus::Split>,
    #[arg(long)]
    pub bucket_threshold: Option<usize>,
    #[arg(long)]
    pub classifier_epochs: Option<usize>,
    #[arg(long)]
    pub classifier_lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Corpus directory supplying tag texts
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub k: Option<usize>,
    /// Return every tag with probability at least this instead of top-K
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Number of seeds, starting at `--seed`
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Report JSON files
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let needs_out = !matches!(cli.command, Command::Retrieve(_) | Command::Gradcheck(_));
    if needs_out && cli.global.out.is_none() {
        Cli::command()
            .error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "the following required argument was not provided: --out <OUT>",
            )
            .exit();
    }

    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
