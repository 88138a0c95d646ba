//! `crmrank`: simulate, aggregate, train, sweep, and evaluate from the shell.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on I/O errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "crmrank",
    version,
    about = "Counterfactual learning to rank from logged bandit feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world, its bandit log, feedback streams, and labeled splits.
    Simulate(SimulateFlags),
    /// Turn impression and positive-feedback streams into graded labels.
    Aggregate(AggregateFlags),
    /// Train a policy from a bandit log.
    TrainCrm(TrainCrmFlags),
    /// Train the cross-entropy baseline on labeled data.
    TrainFullinfo(TrainFullInfoFlags),
    /// Train over a lambda grid, or run the denominator-guided lambda search.
    LambdaSweep(SweepFlags),
    /// Rank a labeled set with a model and report retrieval metrics.
    Evaluate(EvaluateFlags),
    /// Turn a training run's checkpoints into a learning-curve table.
    LearningCurve(CurveFlags),
}

#[derive(Args, Serialize)]
struct Common {
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Run directory [default: $CRMRANK_RUN_ROOT/<command>, else runs/<command>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateFlags {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_queries: Option<usize>,
    #[arg(long)]
    products_per_query: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    relevance_scale: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    relevance_bias: Option<f64>,
    #[arg(long)]
    deep_browse_prob: Option<f64>,
    #[arg(long)]
    logging_noise: Option<f64>,
    #[arg(long)]
    logging_temperature: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    logging_offset: Option<f64>,
    #[arg(long)]
    n_interactions: Option<usize>,
    #[arg(long)]
    visibility_min: Option<u64>,
    #[arg(long)]
    visibility_max: Option<u64>,
    #[arg(long)]
    visibility_threshold: Option<u64>,
    #[arg(long)]
    negative_ratio: Option<f64>,
}

#[derive(Args, Serialize)]
struct AggregateFlags {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// TSV of `query_id product_id`, one line per impression.
    #[arg(long)]
    impressions: Option<PathBuf>,
    /// TSV of `query_id product_id`, one line per positive event.
    #[arg(long)]
    positives: Option<PathBuf>,
    /// Context table (`query_id product_id ... f0 f1 ...`); enables train/dev/test output.
    #[arg(long)]
    contexts: Option<PathBuf>,
    #[arg(long)]
    visibility_threshold: Option<u64>,
    #[arg(long)]
    negative_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// `MAP` or `NDCG@10`.
    #[arg(long)]
    dev_metric: Option<String>,
}

#[derive(Args, Serialize)]
struct ModelFlags {
    /// `linear` or `mlp`.
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Start from this model file instead of a seeded initialization.
    #[arg(long)]
    init_model: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TrainCrmFlags {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    training: TrainFlags,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelFlags,
    /// Bandit log (JSON lines).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Labeled dev set used for checkpoint selection.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    /// `lagrangian`, `ips`, or `ea`.
    #[arg(long)]
    objective: Option<String>,
}

#[derive(Args, Serialize)]
struct TrainFullInfoFlags {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    training: TrainFlags,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelFlags,
    /// Labeled training set.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SweepFlags {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    training: TrainFlags,
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelFlags,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Comma-separated grid; without it the lambda search runs instead.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Epochs per search probe.
    #[arg(long)]
    probe_epochs: Option<usize>,
    #[arg(long)]
    max_probes: Option<usize>,
}

#[derive(Args, Serialize)]
struct EvaluateFlags {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Labeled set to rank.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Comma-separated cut-offs.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// `exponential` (2^g - 1) or `linear` (g).
    #[arg(long)]
    gain: Option<String>,
    #[arg(long)]
    run_tag: Option<String>,
}

#[derive(Args, Serialize)]
struct CurveFlags {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// `checkpoints.jsonl` of a training run, or the run directory.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
}

fn dispatch(command: Command) -> config::Outcome<()> {
    match command {
        Command::Simulate(f) => commands::simulate(f.common.config.as_deref(), &f),
        Command::Aggregate(f) => commands::aggregate(f.common.config.as_deref(), &f),
        Command::TrainCrm(f) => commands::train_crm(f.common.config.as_deref(), &f),
        Command::TrainFullinfo(f) => commands::train_full_info(f.common.config.as_deref(), &f),
        Command::LambdaSweep(f) => commands::lambda_sweep(f.common.config.as_deref(), &f),
        Command::Evaluate(f) => commands::evaluate(f.common.config.as_deref(), &f),
        Command::LearningCurve(f) => commands::learning_curve(f.common.config.as_deref(), &f),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("crmrank: {failure}");
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
