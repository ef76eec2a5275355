//! `rocore` command-line driver: synthetic data generation, training,
//! evaluation, gradient checking and 2-D projection.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "rocore",
    version,
    about = "Relation-oriented clustering for open relation extraction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset of Gaussian relation clusters.
    GenData(GenDataArgs),
    /// Train on a dataset and write reports, checkpoints and a manifest.
    Train(TrainArgs),
    /// Score a checkpoint on instances with gold labels.
    Eval(EvalArgs),
    /// Finite-difference check of every training objective.
    GradCheck(GradCheckArgs),
    /// Write 2-D PCA coordinates of learned representations as CSV.
    Project(ProjectArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Output directory for labeled.jsonl, unlabeled.jsonl and dataset.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with a full dataset spec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    num_predefined: Option<usize>,
    #[arg(long)]
    num_novel: Option<usize>,
    #[arg(long)]
    instances_per_class: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

/// Where a command reads its training data from.
#[derive(Debug, Args)]
struct DataArgs {
    /// Directory written by `gen-data`.
    #[arg(long, conflicts_with_all = ["labeled", "unlabeled"])]
    data: Option<PathBuf>,
    #[arg(long, requires = "unlabeled")]
    labeled: Option<PathBuf>,
    #[arg(long, requires = "labeled")]
    unlabeled: Option<PathBuf>,
    /// Number of novel relations (required with --labeled/--unlabeled).
    #[arg(long)]
    num_novel: Option<usize>,
    /// Number of pre-defined relations; inferred from labels when absent.
    #[arg(long)]
    num_predefined: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON training configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for this run, overriding the configuration.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive seed range `a..b`; one run per seed plus an aggregate.
    #[arg(long)]
    seeds: Option<String>,
    /// Ablation to apply; repeatable.
    #[arg(long, value_enum)]
    ablate: Vec<AblationArg>,
    #[arg(long)]
    out: PathBuf,
    /// Record wall-clock time in the report (makes reports differ between
    /// otherwise identical runs).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum AblationArg {
    NoCenter,
    NoReconstruction,
    NoCe,
}

impl AblationArg {
    fn name(self) -> &'static str {
        match self {
            AblationArg::NoCenter => "no_center",
            AblationArg::NoReconstruction => "no_reconstruction",
            AblationArg::NoCe => "no_ce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Head {
    /// Novel relation classifier (clustering metrics).
    Novel,
    /// Pre-defined (or, in incremental mode, extended) classifier.
    Labeled,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL instances with gold labels.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Head::Novel)]
    head: Head,
    /// Metrics JSON file.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSONL file of `{id, gold, pred}` rows.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 24)]
    configs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Report JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL instances to project.
    #[arg(long)]
    data: PathBuf,
    /// CSV file with columns id,x,y,gold_label,pseudo_label.
    #[arg(long)]
    out: PathBuf,
    /// k-means cluster count for pseudo labels; defaults to the checkpoint's
    /// novel relation count.
    #[arg(long)]
    clusters: Option<usize>,
}

fn run(cli: Cli, args: &[String]) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(a, args),
        Command::Train(a) => commands::train(a, args),
        Command::Eval(a) => commands::eval(a, args),
        Command::GradCheck(a) => commands::grad_check(a, args),
        Command::Project(a) => commands::project(a, args),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Validation(e.render().to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match run(cli, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
