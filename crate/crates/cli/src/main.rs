//! `offenseval`: preprocess tweets, train and apply the offensive-language
//! classifiers, run the target heuristics and score predictions.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;
use config::ConfigFile;

#[derive(Debug, Parser)]
#[command(name = "offenseval", version, about = "Offensive-language detection for tweets")]
struct Cli {
    /// Flat key = value file; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write `id<TAB>tokens` for every tweet in a dataset.
    Preprocess(PreprocessArgs),
    /// Train one classifier and save the best-epoch weights.
    Train(TrainArgs),
    /// Predict OFF/NOT with one model or the mean of several.
    Predict(PredictArgs),
    /// Score a predictions file against gold labels.
    Evaluate(EvaluateArgs),
    /// Label tweets TIN/UNT with the rule engine.
    Taskb(TaskbArgs),
    /// Collect the most frequent hashtags and words of offensive tweets.
    BuildLexicon(LexiconArgs),
}

#[derive(Debug, Args)]
pub struct TextArgs {
    /// Normalization table (variant<TAB>canonical); defaults to the bundled one.
    #[arg(long)]
    pub normalization: Option<PathBuf>,
    /// Word<TAB>count list replacing the bundled English unigram counts.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output file; standard output if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub text: TextArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled training TSV; a validation split is held out from it.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Whitespace-separated word vectors.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// cnn, blstm-att or blstm-bgru.
    #[arg(long)]
    pub arch: Option<String>,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ids to drop from the training data, one per line.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[command(flatten)]
    pub text: TextArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file; repeat to average several.
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// A tweet is OFF when its probability is at least this.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions TSV: id first, label in a later column.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Gold TSV with subtask_a and subtask_b columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// A or B.
    #[arg(long)]
    pub task: Option<String>,
    /// JSON report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TaskbArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Pre-computed tags and entities; the bundled tagger is used if absent.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LexiconArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Items kept per list.
    #[arg(long)]
    pub k: Option<usize>,
    /// Words never counted; defaults to the bundled list.
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
    /// Item to leave out of the lexicon; repeatable.
    #[arg(long = "override")]
    pub overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path).map_err(Failure::Usage)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Preprocess(a) => commands::preprocess(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Predict(a) => commands::predict(a, &cfg),
        Command::Evaluate(a) => commands::evaluate(a, &cfg),
        Command::Taskb(a) => commands::taskb(a, &cfg),
        Command::BuildLexicon(a) => commands::build_lexicon(a, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
