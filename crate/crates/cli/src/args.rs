use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "pixdisc", version, about = "Pixel discretization: codebooks, hardness diagnostics and certificates")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load a dataset and print its digest line.
    Ingest(IngestArgs),
    /// Build codebooks.
    #[command(subcommand)]
    Codebook(CodebookCmd),
    /// Write a discretized copy of a dataset in its original binary format.
    Discretize(DiscretizeArgs),
    /// Fragmentation, neighborhood and histogram diagnostics.
    #[command(subcommand)]
    Hardness(HardnessCmd),
    /// Local and global robustness certificates.
    Certify(CertifyArgs),
    /// Synthetic codeword model.
    #[command(subcommand)]
    Idealmodel(IdealCmd),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Idx,
    Cifar10,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Values in [0, 1], multiplied by 255.
    Unit,
    /// Values in pixel units, 0 to 255.
    Byte,
}

impl Scale {
    pub fn to_byte(self, v: f64) -> Result<f64, String> {
        match self {
            Scale::Unit if !(0.0..=1.0).contains(&v) => {
                Err(format!("{v} is outside [0, 1]; pass --eps-scale byte for pixel units"))
            }
            Scale::Unit => Ok(v * 255.0),
            Scale::Byte if !(0.0..=255.0).contains(&v) => Err(format!("{v} is outside [0, 255]")),
            Scale::Byte => Ok(v),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DatasetArgs {
    #[arg(long, value_enum)]
    pub format: Format,

    /// Directory holding the dataset files, or a root with `mnist/` and
    /// `cifar-10-batches-bin/` subdirectories.
    #[arg(long, env = "PIXDISC_DATA_DIR")]
    pub data_dir: PathBuf,

    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,

    /// Use only the first N images.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    /// Also write the JSON summary here.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Drop images whose mean intensity is below this value (0 to 255).
    #[arg(long)]
    pub filter_dark: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum CodebookCmd {
    /// Build a codebook from the pixel histogram of a dataset.
    Build(BuildArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Binning,
    Density,
    Kmedoids,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Binning => "binning",
            Algo::Density => "density",
            Algo::Kmedoids => "kmedoids",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookPreset {
    /// Density codes, k = 2, r = 153.
    Mnist,
    /// Density codes, k = 300, r = 16.
    Cifar10,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Linf,
    L1,
    L2,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    #[arg(long, value_enum, required_unless_present = "preset")]
    pub algo: Option<Algo>,

    #[arg(long, value_enum, conflicts_with_all = ["algo", "k", "r"])]
    pub preset: Option<CodebookPreset>,

    #[arg(long, required_unless_present = "preset")]
    pub k: Option<usize>,

    /// Removal radius for density codes.
    #[arg(long)]
    pub r: Option<f64>,

    #[arg(long, value_enum, default_value = "byte")]
    pub r_scale: Scale,

    /// Distance used by k-medoids.
    #[arg(long, value_enum, default_value = "l1")]
    pub metric: MetricArg,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 10)]
    pub max_iterations: usize,

    #[arg(long, default_value_t = 4096)]
    pub candidate_cap: usize,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CodesArgs {
    /// Codebook JSON.
    #[arg(long, required_unless_present = "binning_k")]
    pub codes: Option<PathBuf>,

    /// Per-channel binning with this many levels instead of a codebook file.
    #[arg(long, conflicts_with = "codes")]
    pub binning_k: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct DiscretizeArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    #[command(flatten)]
    pub codes: CodesArgs,

    /// Output directory; files use the standard names of the input format.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EpsArgs {
    #[arg(long)]
    pub eps: f64,

    #[arg(long, value_enum, default_value = "byte")]
    pub eps_scale: Scale,
}

#[derive(Subcommand, Debug)]
pub enum HardnessCmd {
    /// CDF of the per-image fragmentation measure.
    Cdf(CdfArgs),
    /// ℓ∞ neighborhood size of every present pixel value.
    Neighborhoods(NeighborhoodArgs),
    /// Pixel-value histogram.
    Histogram(HistogramArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct CdfArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    #[command(flatten)]
    pub codes: CodesArgs,

    #[command(flatten)]
    pub eps: EpsArgs,

    /// CSV with rows `measure,cumulative_fraction`.
    #[arg(long)]
    pub out: PathBuf,

    /// JSON report with per-image measures and the run manifest.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct NeighborhoodArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    #[command(flatten)]
    pub eps: EpsArgs,

    /// CSV with rows `r,g,b,count` (or `value,count`).
    #[arg(long)]
    pub out: PathBuf,

    /// JSON summary with the maximum and the run manifest.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct HistogramArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertifyPreset {
    /// ε in {0, 0.05, ..., 0.3} (unit scale) with the table's budgets.
    MnistTable,
}

#[derive(Args, Debug, Serialize)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    /// Codebook JSON.
    #[arg(long)]
    pub codes: PathBuf,

    /// Classifier JSON.
    #[arg(long, required_unless_present = "fit_prototype")]
    pub model: Option<PathBuf>,

    /// Fit a nearest-prototype classifier on the training split instead of loading one.
    #[arg(long, conflicts_with = "model")]
    pub fit_prototype: bool,

    /// Save the fitted prototype classifier here.
    #[arg(long, requires = "fit_prototype")]
    pub save_model: Option<PathBuf>,

    #[arg(long, required_unless_present = "preset")]
    pub eps: Option<f64>,

    #[arg(long, value_enum, default_value = "byte")]
    pub eps_scale: Scale,

    #[arg(long, default_value_t = pixdisc::certify::DEFAULT_BUDGET_BITS)]
    pub budget_bits: u32,

    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,

    #[arg(long, value_enum, conflicts_with_all = ["eps", "budget_bits"])]
    pub preset: Option<CertifyPreset>,

    /// Keep per-image verdicts in the report.
    #[arg(long)]
    pub verdicts: bool,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum IdealCmd {
    /// Check codeword recovery by the density codebook on sampled data.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutArg {
    Diagonal,
    Random,
}

#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub k: usize,

    /// Minimum pairwise ℓ∞ separation of the codewords.
    #[arg(long)]
    pub gamma: u32,

    #[arg(long)]
    pub sigma: f64,

    #[arg(long, default_value_t = 1000)]
    pub images: usize,

    /// Pixels per image.
    #[arg(long, default_value_t = 1024)]
    pub d: usize,

    #[arg(long, default_value_t = 3)]
    pub channels: usize,

    #[arg(long, default_value_t = 100)]
    pub trials: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_enum, default_value = "diagonal")]
    pub layout: LayoutArg,

    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,

    #[arg(long)]
    pub out: PathBuf,
}
