//! The `erfc` command line.
//!
//! Every stage accepts `--config <file.json>` whose keys match the long flag
//! names in snake case. Flags given on the command line win over the file.
//! Each stage writes `resolved-config.json` into its output directory.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "erfc", version, about = "Emotion recognition and forecasting for dyadic conversations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, feature files and ground truth.
    Synth(SynthArgs),
    /// Fit audio and speaker PCA on the training conversations.
    FitPca(FitPcaArgs),
    /// Build a windowed example dataset.
    Build(BuildArgs),
    /// Train a stacked forecaster on a dataset.
    Train(TrainArgs),
    /// Score a model on a dataset or on the test session of a corpus.
    Evaluate(EvaluateArgs),
    /// Run the experiment grid end to end.
    Grid(GridArgs),
    /// Write per-turn predictions for one conversation.
    Predict(PredictArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct CommonArgs {
    /// JSON file with default values for any flag.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CorpusArgs {
    /// Directory holding utterances.jsonl, text.csv, audio.csv and speaker.csv.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub utterances: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long)]
    pub audio: Option<PathBuf>,
    #[arg(long)]
    pub speaker: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PcaArgs {
    /// Audio PCA width; 0 keeps raw vectors. Capped at the input width.
    #[arg(long)]
    pub audio_components: Option<usize>,
    /// Speaker PCA width; 0 keeps raw vectors. Capped at the input width.
    #[arg(long)]
    pub speaker_components: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct WindowArgs {
    /// Context window for every modality and the emotion history.
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub w_text: Option<usize>,
    #[arg(long)]
    pub w_audio: Option<usize>,
    #[arg(long)]
    pub w_speaker: Option<usize>,
    #[arg(long)]
    pub w_emotion: Option<usize>,
    /// Forecast horizon k.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Include AVD in the emotion history.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub use_avd: Option<bool>,
    /// six or four.
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct LearnerArgs {
    /// rf:<n_trees>:<max_depth>, logreg:<l2> or stump-boost:<rounds>.
    #[arg(long)]
    pub learner: Option<String>,
    /// Out-of-fold stacking folds.
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// benchmark, separable, influence, intensity or twins.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub n_conversations: Option<usize>,
    #[arg(long)]
    pub turns_mean: Option<usize>,
    /// Also write oracle.json with Bayes-oracle accuracy per horizon.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub oracle: Option<bool>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitPcaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub pca: PcaArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub window: WindowArgs,
    /// Directory written by fit-pca; without it raw vectors are used.
    #[arg(long)]
    pub pca_dir: Option<PathBuf>,
    /// all, train, validation or test.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub learner: LearnerArgs,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Score this dataset instead of the corpus test session.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// teacher-forced or autoregressive.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct GridArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub pca: PcaArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub learner: LearnerArgs,
    /// Comma-separated experiment ids, E1 to E6.
    #[arg(long)]
    pub specs: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub mode: Option<String>,
    /// Without a corpus, generate this synthetic preset in memory.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub n_conversations: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Conversation id to predict.
    #[arg(long)]
    pub conv: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Missing or malformed flags; exit code 2.
    Usage(String),
    /// Invalid inputs or failed stages; exit code 1.
    Validation(anyhow::Error),
}

impl<E: std::error::Error + Send + Sync + 'static> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Validation(e.into())
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(config::resolve(&a.common, &a)?),
        Command::FitPca(a) => commands::fit_pca(config::resolve(&a.common, &a)?),
        Command::Build(a) => commands::build(config::resolve(&a.common, &a)?),
        Command::Train(a) => commands::train(config::resolve(&a.common, &a)?),
        Command::Evaluate(a) => commands::evaluate(config::resolve(&a.common, &a)?),
        Command::Grid(a) => commands::grid(config::resolve(&a.common, &a)?),
        Command::Predict(a) => commands::predict(config::resolve(&a.common, &a)?),
    }
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Validation(e)) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::from(1)
        }
    }
}

/// The error and its causes, skipping causes the outer message already shows.
fn chain(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}
