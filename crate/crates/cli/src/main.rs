//! `cxrfuse`: prepare datasets, train and cross-validate the fusion
//! classifier, and inspect its predictions and heatmaps.

mod bundle;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cxrfuse::datasets::Recipe;

#[derive(Parser)]
#[command(name = "cxrfuse", version, about = "Dual-backbone fusion classifier for chest X-rays")]
struct Cli {
    /// Root directory for outputs whose location is not given explicitly.
    #[arg(long, global = true, env = "CXRFUSE_OUTPUT", default_value = "runs")]
    output_root: PathBuf,

    /// Only print warnings and errors to stderr.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a run configuration with every default filled in.
    Config(ConfigArgs),
    /// Select images from the source cohorts into a manifest CSV.
    Prepare(PrepareArgs),
    /// Write Monte Carlo train/test id lists for a manifest.
    Split(SplitArgs),
    /// Train a model on a manifest (or a subset of it).
    Train(TrainArgs),
    /// Score a trained model on a manifest and write a metrics report.
    Evaluate(EvaluateArgs),
    /// Print class probabilities for single images.
    Infer(InferArgs),
    /// Write activation heatmap overlays and check circle annotations.
    Heatmap(HeatmapArgs),
    /// Train and evaluate over Monte Carlo folds and summarize.
    Crossval(CrossvalArgs),
}

#[derive(Args, Clone, Default)]
pub struct Common {
    /// Run configuration (JSON). Flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed; every stage derives its own seed from it.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
pub struct ModelFlags {
    /// Use the small 64 px, 1/8-width fusion model (for smoke tests).
    #[arg(long)]
    pub tiny: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Converted ResNet-50 weight archive (implies pretraining).
    #[arg(long)]
    pub resnet_weights: Option<PathBuf>,
    /// Converted DenseNet-121 weight archive (implies pretraining).
    #[arg(long)]
    pub densenet_weights: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
pub struct SplitFlags {
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Split each class separately.
    #[arg(long)]
    pub stratified: bool,
}

#[derive(Args)]
pub struct ConfigArgs {
    /// Start from the tiny model instead of the full-size one.
    #[arg(long)]
    pub tiny: bool,
}

#[derive(Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub common: Common,
    /// DXR1, DXR2, DXR3 or DXR4.
    #[arg(long)]
    pub dataset: Option<Recipe>,
    #[arg(long)]
    pub source1: Option<PathBuf>,
    #[arg(long)]
    pub source2: Option<PathBuf>,
    #[arg(long)]
    pub source3: Option<PathBuf>,
    /// Manifest path [default: <output-root>/<dataset>/manifest.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub split: SplitFlags,
    /// Output directory [default: <output-root>/split].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Restrict training to the ids listed in this file (e.g. fold1_train.csv).
    #[arg(long)]
    pub ids: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Output directory [default: <output-root>/train].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub ids: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Report path [default: <output-root>/evaluate/report.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Args)]
pub struct HeatmapArgs {
    /// Fusion model directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Layers to render [default: all ten].
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<String>,
    /// Circle annotations (JSON list) to check against the heatmaps.
    #[arg(long)]
    pub check: Option<PathBuf>,
    /// Layer used for `--check`.
    #[arg(long, default_value = "global_concat")]
    pub check_layer: String,
    /// Output directory for overlays [default: <output-root>/heatmaps].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Stub {
    /// Always predicts the training set's majority class.
    Constant,
    /// Predicts the true class with a fixed probability.
    Oracle,
}

#[derive(Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub split: SplitFlags,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Folds trained concurrently; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Replace the network with a stub predictor (images are not read).
    #[arg(long)]
    pub stub: Option<Stub>,
    /// Accuracy of the `oracle` stub.
    #[arg(long, default_value_t = 0.9)]
    pub oracle_accuracy: f64,
    /// Keep each fold's trained model under fold<k>/model.
    #[arg(long)]
    pub save_models: bool,
    /// Output directory [default: <output-root>/crossval].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let root = cli.output_root;
    let result = match cli.command {
        Command::Config(a) => commands::config(&a),
        Command::Prepare(a) => commands::prepare(&a, &root),
        Command::Split(a) => commands::split(&a, &root),
        Command::Train(a) => commands::train(&a, &root),
        Command::Evaluate(a) => commands::evaluate(&a, &root),
        Command::Infer(a) => commands::infer(&a),
        Command::Heatmap(a) => commands::heatmap(&a, &root),
        Command::Crossval(a) => commands::crossval(&a, &root),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Display already includes the wrapped cause.
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
