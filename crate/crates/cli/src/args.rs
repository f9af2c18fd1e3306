use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "uwhdn", version, about = "Unsupervised underwater image dehazing")]
pub struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair a dataset directory into a manifest and draw the unpaired split.
    PrepareData(PrepareDataArgs),
    /// Train the disentanglement and restoration networks.
    Train(TrainArgs),
    /// Write content and restored images for a file or directory.
    Restore(RestoreArgs),
    /// Score a checkpoint on a paired manifest and emit plots.
    Evaluate(EvaluateArgs),
    /// Print haze-encoder responses on clean and underwater images.
    Diagnose(DiagnoseArgs),
    /// Degrade images with the synthetic water model, or generate a paired set.
    Synthesize(SynthesizeArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory.
    #[arg(long, env = "UWHDN_OUT", default_value = "uwhdn-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrepareDataArgs {
    /// Dataset root containing `underwater/` and `clean/`.
    #[arg(long)]
    pub root: PathBuf,
    /// UFO120, UWNET, UWSCENES, UIEB or SYNTHETIC.
    #[arg(long)]
    pub kind: String,
    /// Seed of the unpaired split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by prepare-data.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with training settings; flags override it field by field.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
    /// Patch side in pixels [default: 128]
    #[arg(long)]
    pub patch: Option<usize>,
    /// Patches per domain per step [default: 4]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adam learning rate [default: 0.0005]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Adam first-moment decay [default: 0.9]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam second-moment decay [default: 0.99]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Passes over the larger unpaired side [default: 80]
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Stop after this many steps in total [default: no cap]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Seed for initialisation and sampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record every n-th step in the loss trace [default: 1]
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Checkpoint every n steps [default: 1000]
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Network base width [default: 64]
    #[arg(long)]
    pub base_width: Option<usize>,
    /// Residual blocks per generator/decoder [default: 2]
    #[arg(long)]
    pub res_blocks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image file or directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Paired manifest (JSONL) of test images.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Loss trace CSV to plot.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Test images shown in the before/after grid.
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Paired manifest (JSONL) supplying both domains.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Clean image file or directory to degrade.
    #[arg(long, conflicts_with = "count", required_unless_present = "count")]
    pub input: Option<PathBuf>,
    /// Generate this many procedural clean/underwater pairs instead.
    #[arg(long)]
    pub count: Option<usize>,
    /// Side of generated images.
    #[arg(long, default_value_t = 64, requires = "count")]
    pub size: usize,
    /// Seed for scenes and water parameters.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use transmission 1 everywhere, which leaves images unchanged.
    #[arg(long, conflicts_with = "count")]
    pub identity: bool,
    #[command(flatten)]
    pub out: OutArg,
}
