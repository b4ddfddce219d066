//! Command-line interface definition.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rationale_core::model::ModelKind;
use rationale_core::pipeline::RankingStrategy;
use rationale_core::rationale::FlipMode;

use crate::config::{
    parse_answer_span, parse_flip, parse_model_kind, parse_ranking, AnswerSpanChoice,
};

#[derive(Debug, Parser)]
#[command(
    name = "rationale",
    version,
    about = "Train small span-prediction QA models, attribute their answers \
             to passage words with integrated gradients, and extract \
             decision-flip rationales."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic QA dataset with gold rationale annotations.
    Generate(GenerateArgs),
    /// Train a span predictor and write a checkpoint.
    Train(TrainArgs),
    /// Attribute and extract rationales for every example.
    Extract(ExtractArgs),
    /// Score rationales: flip statistics and human-overlap tables.
    Evaluate(EvaluateArgs),
    /// Render a human-readable summary with marked rationales.
    Report(ReportArgs),
}

#[derive(Debug, Parser)]
pub struct GenerateArgs {
    /// Number of examples to generate.
    #[arg(long)]
    pub examples: Option<usize>,
    /// Minimum passage length in tokens.
    #[arg(long)]
    pub min_tokens: Option<usize>,
    /// Maximum passage length in tokens (soft bound; the last sentence
    /// may overshoot slightly).
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML config file; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Parser)]
pub struct TrainArgs {
    /// Dataset to train on (flat or SQuAD-format JSON).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model kind: cosine-lite or dense-lite.
    #[arg(long, value_parser = parse_model_kind)]
    pub model: Option<ModelKind>,
    /// Embedding dimension L.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// SGD learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Hold out the last N examples from training; they are written to
    /// holdout.json for downstream extraction and evaluation.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// RNG seed (initialization and batch shuffling).
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML config file; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Parser)]
pub struct ExtractArgs {
    /// Dataset to extract rationales for.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Trained model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Integration steps for integrated gradients.
    #[arg(long)]
    pub ig_steps: Option<usize>,
    /// Flip definition: prediction-change or gold-mismatch.
    #[arg(long, value_parser = parse_flip)]
    pub flip: Option<FlipMode>,
    /// Removal-order source: ig or random.
    #[arg(long, value_parser = parse_ranking)]
    pub ranking: Option<RankingStrategy>,
    /// Base seed for the random-ranking control.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// TOML config file; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Parser)]
pub struct EvaluateArgs {
    /// Rationale dump from `extract` (rationales.jsonl).
    #[arg(long)]
    pub rationales: PathBuf,
    /// Human rationale annotations (JSONL).
    #[arg(long)]
    pub annotations: PathBuf,
    /// Answer-span handling in overlap scoring: include, exclude, or both.
    #[arg(long, value_parser = parse_answer_span)]
    pub answer_span: Option<AnswerSpanChoice>,
    /// Union the model's predicted span into the answer set instead of
    /// the gold span alone.
    #[arg(long)]
    pub include_predicted_answer: bool,
    /// Stop-word list override (one word per line).
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Row label in report tables.
    #[arg(long, default_value = "run")]
    pub label: String,
    /// TOML config file; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Parser)]
pub struct ReportArgs {
    /// Dataset the rationales were extracted from (for question text).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Rationale dump from `extract` (rationales.jsonl).
    #[arg(long)]
    pub rationales: PathBuf,
    /// Render at most this many per-example blocks.
    #[arg(long)]
    pub limit: Option<usize>,
    /// TOML config file; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
