//! `emofuse` command-line pipeline.

mod commands;
mod manifest;
mod presets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use presets::Preset;

#[derive(Parser, Debug)]
#[command(
    name = "emofuse",
    version,
    about = "Speech emotion recognition: consensus, training, fusion and scoring",
    arg_required_else_help = true
)]
struct Cli {
    /// Where to write the run manifest (default: beside the main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recompute consensus labels after discarding unreliable annotators.
    Consensus(ConsensusArgs),
    /// Train a linear head on pooled feature streams.
    Train(TrainArgs),
    /// Write per-sample posteriors from a trained head.
    Predict(PredictArgs),
    /// Train the SVM that fuses sub-system posteriors.
    FuseTrain(FuseTrainArgs),
    /// Apply a fusion SVM.
    FusePredict(FusePredictArgs),
    /// Score predictions against reference labels.
    Eval(EvalArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct ConsensusArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Labels CSV with the original consensus (X for no consensus).
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Treat a Neutral-vs-other tie as no consensus.
    #[arg(long)]
    pub no_neutral_drop: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Labels CSV for training: original labels plus newly resolved samples.
    #[arg(long)]
    pub augmented_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Nll,
    Jeffreys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    Mean,
    Attention,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Feature container, one per stream (repeatable).
    #[arg(long, required = true)]
    pub features: Vec<PathBuf>,
    #[arg(long)]
    pub features2: Option<PathBuf>,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub dev_features: Vec<PathBuf>,
    #[arg(long)]
    pub dev_features2: Option<PathBuf>,
    #[arg(long)]
    pub dev_labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr_head: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub lr_pooling: f64,
    #[arg(long, default_value_t = 0.0025)]
    pub newbob_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    pub newbob_factor: f64,
    #[arg(long, default_value_t = 2)]
    pub newbob_patience: u32,
    /// Keep learning rates fixed.
    #[arg(long)]
    pub no_newbob: bool,
    #[arg(long, env = "EMOFUSE_SEED", default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV of loss, dev Macro-F1 and learning rates.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true)]
    pub features: Vec<PathBuf>,
    #[arg(long)]
    pub features2: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FuseTrainArgs {
    /// Comma-separated predictions files, one per sub-system.
    #[arg(long, value_delimiter = ',', required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, env = "EMOFUSE_SEED", default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FusePredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Csv,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    pub format: FormatArg,
    /// Row-normalized confusion matrix CSV.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 25)]
    pub dev_per_class: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub streams: usize,
    #[arg(long, default_value_t = 5)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 20)]
    pub max_frames: usize,
    #[arg(long, default_value_t = 0.35)]
    pub separation: f64,
    #[arg(long, default_value_t = 12)]
    pub annotators: usize,
    #[arg(long, default_value_t = 4)]
    pub votes_per_sample: usize,
    #[arg(long, default_value_t = 0.3)]
    pub error_rate: f64,
    #[arg(long, env = "EMOFUSE_SEED", default_value_t = 42)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests exit 0, usage errors 2
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let manifest = cli.manifest.as_deref();
    let result = match &cli.command {
        Command::Consensus(a) => commands::consensus(a, manifest),
        Command::Train(a) => commands::train(a, manifest),
        Command::Predict(a) => commands::predict(a, manifest),
        Command::FuseTrain(a) => commands::fuse_train(a, manifest),
        Command::FusePredict(a) => commands::fuse_predict(a, manifest),
        Command::Eval(a) => commands::eval(a, manifest),
        Command::Synth(a) => commands::synth(a, manifest),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
