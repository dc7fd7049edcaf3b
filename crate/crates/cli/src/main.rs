//! `lalign`: synthesize embedding pairs, train compatibility maps, and
//! evaluate retrieval and backfilling from the command line.

mod commands;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lalign_core::backfill::OrderingKind;
use lalign_core::embedding::Distortion;
use lalign_core::retrieval::Distance;
use lalign_core::trainer::{BackwardKind, ContrastiveMode, ForwardKind};
use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(
    name = "lalign",
    version,
    about = "Backward-compatible embedding transforms"
)]
struct Cli {
    /// Worker threads for parallel evaluation (0 = all cores; 1 = bit-reproducible).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic old/new bundle pair.
    Synth(SynthArgs),
    /// Train forward and backward maps on paired bundles.
    Train(TrainArgs),
    /// Apply a map file to a bundle.
    Transform(TransformArgs),
    /// Retrieval metrics and compatibility verdicts for query/gallery pairs.
    Eval(EvalArgs),
    /// Metric curves over the backfilled gallery fraction.
    Backfill(BackfillArgs),
    /// Kernel density of the angles between a map's columns.
    Angles(AnglesArgs),
    /// Gradient, linear-algebra and metric self-checks.
    Diagnose(DiagnoseArgs),
}

/// Parses a flag value through the type's serde string representation.
fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON config (`{"out": ..., "spec": {...}}`); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; receives `old/`, `new/` and `synth_report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub dim_old: Option<usize>,
    #[arg(long)]
    pub dim_new: Option<usize>,
    /// One shared class spread, or one value per class (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub spread: Vec<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    /// orthogonal | affine | affine-noise
    #[arg(long, value_parser = serde_enum::<Distortion>)]
    pub distortion: Option<Distortion>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub condition_number: Option<f64>,
    #[arg(long)]
    pub new_spread_factor: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON config (`{"old", "new", "out", "train": {...}}`); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Old-model training bundle.
    #[arg(long)]
    pub old: Option<PathBuf>,
    /// New-model training bundle, row-aligned with `--old`.
    #[arg(long)]
    pub new: Option<PathBuf>,
    /// Output directory; receives `forward.map`, `backward.map` and `train_report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// orthogonal | lambda_affine | affine
    #[arg(long, value_parser = serde_enum::<BackwardKind>)]
    pub backward: Option<BackwardKind>,
    /// affine | mlp
    #[arg(long, value_parser = serde_enum::<ForwardKind>)]
    pub forward: Option<ForwardKind>,
    /// labeled | unlabeled
    #[arg(long, value_parser = serde_enum::<ContrastiveMode>)]
    pub contrastive_mode: Option<ContrastiveMode>,
    #[arg(long)]
    pub freeze_backward_in_contrastive: Option<bool>,
    /// Forward alignment weight.
    #[arg(long)]
    pub w1: Option<f64>,
    /// Backward alignment weight.
    #[arg(long)]
    pub w2: Option<f64>,
    /// Contrastive weight.
    #[arg(long)]
    pub w3: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub backward_init_std: Option<f64>,
    #[arg(long)]
    pub forward_init_std: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TransformArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundle to transform.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Map file.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Output bundle directory; also receives `transform_report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub model_tag: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub old: Option<PathBuf>,
    #[arg(long)]
    pub new: Option<PathBuf>,
    #[arg(long)]
    pub forward: Option<PathBuf>,
    #[arg(long)]
    pub backward: Option<PathBuf>,
    /// `QUERY:GALLERY` with sides old, new, f-old, b-new (repeatable).
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub top_k: Vec<usize>,
    /// l2 | cosine
    #[arg(long, value_parser = serde_enum::<Distance>)]
    pub distance: Option<Distance>,
    /// Exclude each query's own row from its gallery.
    #[arg(long)]
    pub leave_one_out: Option<bool>,
    /// Also count pairwise compatibility-inequality violations.
    #[arg(long)]
    pub pairwise: Option<bool>,
    /// Output directory; receives `eval_report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BackfillArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub old: Option<PathBuf>,
    #[arg(long)]
    pub new: Option<PathBuf>,
    #[arg(long)]
    pub forward: Option<PathBuf>,
    #[arg(long)]
    pub backward: Option<PathBuf>,
    /// ours_mse | ours_cosine | random (comma separated).
    #[arg(long = "ordering", value_delimiter = ',', value_parser = serde_enum::<OrderingKind>)]
    pub orderings: Vec<OrderingKind>,
    /// Ascending β values from 0 to 1 (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub beta_grid: Vec<f64>,
    #[arg(long, value_parser = serde_enum::<Distance>)]
    pub distance: Option<Distance>,
    #[arg(long)]
    pub leave_one_out: Option<bool>,
    /// Seed of the random ordering.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; receives one CSV per ordering and `backfill_report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnglesArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Affine or orthogonal map file.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Grid step in degrees.
    #[arg(long)]
    pub step: Option<f64>,
    /// Kernel bandwidth in degrees (default: Silverman's rule).
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Output directory; receives `angles.csv` and `angles_report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random instances per gradient check.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory; receives `diagnose_report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_bad_gradient: bool,
}

fn run(cli: Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    pool.install(|| match cli.command {
        Command::Synth(a) => commands::synth(a, threads),
        Command::Train(a) => commands::train(a, threads),
        Command::Transform(a) => commands::transform(a, threads),
        Command::Eval(a) => commands::eval(a, threads),
        Command::Backfill(a) => commands::backfill(a, threads),
        Command::Angles(a) => commands::angles(a, threads),
        Command::Diagnose(a) => commands::diagnose(a, threads),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
