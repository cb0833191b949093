use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "aact", version, about = "Counterfactual critique engine: train, analyze, serve, simulate, score")]
pub struct Cli {
    /// Shared TOML config; flags and environment variables take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the classifier on a seeded split and report held-out metrics.
    Train(TrainArgs),
    /// Report held-out metrics of a saved model.
    Evaluate(EvaluateArgs),
    /// Critique (decision, argument) records.
    Analyze(AnalyzeArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Drive simulated participants through complete sessions.
    Simulate(SimulateArgs),
    /// Compute reliance and learning measures from transcripts.
    Score(ScoreArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    #[default]
    Md,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Dataset CSV.
    #[arg(long, env = "AACT_DATA", value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Feature schema; defaults to `<stem>_schema.toml` next to the data.
    #[arg(long, value_name = "PATH")]
    pub schema: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Saved model JSON.
    #[arg(long, env = "AACT_MODEL", value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Dataset CSV the model was trained on.
    #[arg(long, env = "AACT_DATA", value_name = "PATH")]
    pub data: Option<PathBuf>,
}

/// Engine parameter overrides.
#[derive(Args, Debug, Clone, Default)]
pub struct ParamArgs {
    /// Confidence-change threshold.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Maximum number of conflicting alternatives.
    #[arg(long)]
    pub k: Option<usize>,
    /// Monte Carlo sample count.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Importance threshold for strongest-argument construction.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Base seed for Monte Carlo draws.
    #[arg(long = "engine-seed")]
    pub engine_seed: Option<u64>,
    /// independent, conditional or exhaustive.
    #[arg(long)]
    pub sampling: Option<String>,
    /// Minimum support for data-based estimates.
    #[arg(long)]
    pub min_support: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training fraction.
    #[arg(long)]
    pub split: Option<f64>,
    /// Split seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep class proportions equal across the split.
    #[arg(long)]
    pub stratify: bool,
    /// Equal-frequency bins per continuous feature.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Where to write the model.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    /// JSONL records: `{"task_id", "decision", "argument"}`.
    #[arg(long, value_name = "PATH")]
    pub records: Option<PathBuf>,
    /// Also run the exhaustive strongest-argument search for every
    /// alternative and report the gap.
    #[arg(long)]
    pub exact_oracle: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, env = "AACT_PORT")]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    /// Directory for completed transcripts.
    #[arg(long, value_name = "DIR")]
    pub transcripts: Option<PathBuf>,
    /// Built UI assets.
    #[arg(long = "static", value_name = "DIR")]
    pub static_dir: Option<PathBuf>,
    /// Timestamp events with sequence numbers instead of wall-clock time.
    #[arg(long)]
    pub logical_clock: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    /// always_keep, always_adopt or threshold:<p>.
    #[arg(long, default_value = "always_keep")]
    pub policy: String,
    /// Assistance on intervention tasks: aact, recommender or analyzer.
    #[arg(long, default_value = "aact")]
    pub mode: String,
    /// Participants, twenty tasks each.
    #[arg(long, default_value_t = 1)]
    pub participants: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chance a simulated initial decision is correct.
    #[arg(long, default_value_t = 0.6)]
    pub human_accuracy: f64,
    /// Write one transcript per session here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Drive sessions through the HTTP router instead of in-process calls.
    #[arg(long)]
    pub http: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Directory of transcript JSONL files.
    #[arg(long, value_name = "DIR")]
    pub transcripts: Option<PathBuf>,
    /// Also write `metrics.json` and `metrics.csv` here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}
