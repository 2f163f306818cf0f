use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dcnet::model::{Ablation, ChannelPlan};
use dcnet::rpm::Config;

#[derive(Debug, Parser)]
#[command(name = "dcnet", version, about = "Dual-contrast network for Raven-style matrices")]
pub struct Cli {
    /// Flat `key=value` file supplying defaults for the subcommand's flags
    /// (keys are long flag names; flags given on the command line win).
    #[arg(long, global = true, value_name = "PATH")]
    pub config_file: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic puzzle dataset.
    Gen(GenArgs),
    /// Import a directory of RAVEN-style .npz puzzles.
    Import(ImportArgs),
    /// Train a model and write a checkpoint and per-epoch metrics.
    Train(TrainArgs),
    /// Report the accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train every ablation variant over several seeds.
    Ablation(AblationArgs),
    /// Train on growing fractions of the training set.
    Fewshot(FewShotArgs),
    /// Finite-difference check of every layer and of the full loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of puzzles.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = Config::Center)]
    pub config: Config,
    /// Panel side in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Shift each object by up to one pixel.
    #[arg(long)]
    pub jitter: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub dir: PathBuf,
    /// Panels are resampled to this side.
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Encoder widths `stem,out`.
    #[arg(long, default_value_t = ChannelPlan::STANDARD)]
    pub channels: ChannelPlan,
    /// Hidden width of the scoring MLP.
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout_p: f64,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Test dataset, evaluated every `--eval-every` epochs.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = Ablation::Full)]
    pub ablation: Ablation,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    pub metrics: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated variants.
    #[arg(long, value_delimiter = ',', default_value = "full,no_rule_contrast,no_choice_contrast")]
    pub variants: Vec<Ablation>,
    /// Comma-separated seeds; three entropy-drawn seeds when omitted.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Comparison table CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct FewShotArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated, strictly increasing, each in (0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0.0625,0.125,0.25,0.5,1.0")]
    pub fractions: Vec<f64>,
    /// Comma-separated seeds; three entropy-drawn seeds when omitted.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = Ablation::Full)]
    pub ablation: Ablation,
    /// Per-fraction table CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
}
