use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "vquant", version, about = "Outlier-aware low-bit quantization experiments")]
pub struct Cli {
    /// Seed for every random draw of the run. Overrides config files.
    #[arg(long, global = true, env = "VQUANT_SEED")]
    pub seed: Option<u64>,

    /// Worker threads for parallel sections. Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a .vqtn tensor into a .vqtq file and print its error summary.
    Quantize(QuantizeArgs),
    /// Expand a .vqtq file back into a dense .vqtn tensor.
    Dequantize(DequantizeArgs),
    /// Train an MLP with quantized activation storage.
    Train(TrainArgs),
    /// Tabulate stored-activation memory fractions.
    Memtable(MemtableArgs),
    /// Compare per-shard outlier selection against global selection.
    Shardsim(ShardsimArgs),
    /// Quantize a trained model, optionally fine-tune, and evaluate it.
    Ptq(PtqArgs),
    /// Evaluate several post-training configurations and pick the smallest.
    Sweep(SweepArgs),
    /// Generate a synthetic dataset as .vqtn files.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Value-aware quantization.
    V,
    /// ReLU-and-value-aware quantization (code 0 marks zeros).
    Rv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RangeArg {
    Symmetric,
    Asymmetric,
    Nonnegative,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    pub input: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub bits: u8,
    /// Fraction of elements kept exactly, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    pub ratio: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::V)]
    pub mode: ModeArg,
    /// Defaults to nonnegative for rv and symmetric otherwise.
    #[arg(long, value_enum)]
    pub range: Option<RangeArg>,
    /// Precision of the exact values.
    #[arg(long, default_value_t = 32, value_parser = parse_outlier_bits)]
    pub outlier_bits: u8,
    /// Store a ReLU mask alongside the codes (v mode on nonnegative data).
    #[arg(long)]
    pub mask: bool,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write a run manifest here.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DequantizeArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Print the error against this original tensor.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding train/test splits written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated phases such as `F,3:2,2:0`.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning-rate factor applied at each phase boundary.
    #[arg(long)]
    pub phase_lr_decay: Option<f64>,
    /// Hidden layer widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Report directory.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also save the trained network to this directory.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MemtableArgs {
    /// Low-precision widths; 32 gives the full-precision row.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,8", value_parser = clap::value_parser!(u32).range(1..=32))]
    pub bits: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.02,0.03")]
    pub ratios: Vec<f64>,
    /// Any of vmask, v, rv, none.
    #[arg(long, value_delimiter = ',', default_value = "vmask,rv")]
    pub modes: Vec<String>,
    #[arg(long, default_value_t = 32, value_parser = parse_outlier_bits)]
    pub outlier_bits: u8,
    /// Layer count of the equal-size network in the checkpoint column.
    #[arg(long, default_value_t = 100)]
    pub checkpoint_layers: usize,
    /// Write the CSV here instead of stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShardsimArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Source distribution, e.g. `laplace:0,1`.
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub elements: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub workers: Option<Vec<usize>>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
    pub bits: Option<u8>,
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Sort the tensor before sharding so large values cluster.
    #[arg(long)]
    pub sorted: bool,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PtqArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model directory written by `train --save-model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Weight and activation bits (1..=8, or 32 to bypass).
    #[arg(long)]
    pub bits: Option<u8>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_lr: Option<f64>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Candidates as `bits:percent`, e.g. `4:1,5:1,8:0`.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<String>>,
    /// Allowed accuracy drop below float, in points.
    #[arg(long)]
    pub max_drop: Option<f64>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_lr: Option<f64>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    /// The default digits task.
    Toy,
    Digits,
    Blobs,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::Toy)]
    pub task: TaskArg,
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Digits pixel noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Blobs class count.
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Blobs dimension.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Blobs centre spread.
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    /// Share of samples in the train split.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(short, long)]
    pub out: PathBuf,
}

fn parse_outlier_bits(s: &str) -> Result<u8, String> {
    match s {
        "32" => Ok(32),
        "16" => Ok(16),
        _ => Err(format!("outlier bits must be 32 or 16, got '{s}'")),
    }
}
