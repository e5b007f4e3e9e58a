//! `semidistill`: teacher training, weak labeling, student distillation and
//! model comparison from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use semidistill::losses::LossKind;

/// A usage or configuration problem detected by the CLI itself.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// The pipeline stopped before finishing; the partial report was written.
#[derive(Debug)]
pub struct Aborted(pub String);

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "pipeline aborted: {}", self.0)
    }
}

impl std::error::Error for Aborted {}

#[derive(Parser, Debug)]
#[command(
    name = "semidistill",
    version,
    about = "Semi-supervised knowledge distillation for short texts"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print nothing but errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic labeled corpus (config: a synth TOML file).
    Synth,
    /// Split a labeled corpus into labeled, pool and test JSONL files.
    Ingest(IngestArgs),
    /// Train the teacher on labeled data.
    TrainTeacher(TrainArgs),
    /// Label an unlabeled pool with a trained model.
    WeakLabel(WeakLabelArgs),
    /// Train (or continue training) a student on labeled data.
    FineTuneStudent(FineTuneArgs),
    /// Train a student on accepted weak labels.
    Distill(DistillArgs),
    /// Score a model on a labeled test set.
    Evaluate(EvaluateArgs),
    /// Compare two models on the same test set with the Stuart-Maxwell test.
    Compare(CompareArgs),
    /// Run teacher training, weak labeling and distillation end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Labeled JSONL corpus.
    #[arg(long, conflicts_with = "newsgroups")]
    pub input: Option<PathBuf>,
    /// 20 Newsgroups directory (one subdirectory per category, or the
    /// by-date train/test pair).
    #[arg(long)]
    pub newsgroups: Option<PathBuf>,
    /// `paper` or comma-separated labeled,pool,test fractions.
    #[arg(long)]
    pub split: Option<String>,
    /// Same as `--split paper`: 8,073 labeled, 805 test, the rest pooled.
    #[arg(long, conflicts_with = "split")]
    pub paper_counts: bool,
    /// Keep newsgroup headers.
    #[arg(long)]
    pub keep_headers: bool,
}

#[derive(Args, Debug, Default)]
pub struct ModelOverrides {
    #[arg(long, value_parser = ["linear", "mlp"])]
    pub architecture: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Hashed feature dimension (power of two).
    #[arg(long)]
    pub dimension: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Labeled JSONL training data (defaults to the config's data section).
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Labeled JSONL test data.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOverrides,
}

#[derive(Args, Debug)]
pub struct WeakLabelArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Unlabeled JSONL pool.
    #[arg(long)]
    pub pool: PathBuf,
    /// Minimum confidence for a weak label to be accepted.
    #[arg(long, default_value_t = semidistill::distill::DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct FineTuneArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Continue from this model instead of a fresh student.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    /// Starting student model.
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub pool: PathBuf,
    /// Weak labels written by `weak-label`.
    #[arg(long)]
    pub weak_labels: PathBuf,
    #[arg(long, default_value = "soft-kl")]
    pub strategy: LossKind,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Re-apply a different confidence threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also train on this labeled JSONL file.
    #[arg(long)]
    pub include_labeled: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub model_a: PathBuf,
    #[arg(long)]
    pub model_b: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// Distillation strategies (repeatable); overrides the config.
    #[arg(long = "strategy")]
    pub strategies: Vec<LossKind>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

/// Process exit status for an error: 2 for usage problems, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<semidistill::Error>() {
            return if e.is_usage() { 2 } else { 1 };
        }
    }
    1
}
