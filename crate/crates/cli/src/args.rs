use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "gtta", version, about = "Generalized test-time augmentation toolkit")]
pub struct Cli {
    /// JSON file of flag values; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for candidate and input parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More logging (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic fixture.
    Synth(SynthArgs),
    /// Train the base MLP on a labeled dataset.
    Train(TrainArgs),
    /// Fit the PCA subspace on reference data.
    Fit(FitArgs),
    /// Ensemble prediction with uncertainty maps.
    Predict(PredictArgs),
    /// Ensemble prediction choosing sigma per input from a grid.
    AutoSigma(AutoSigmaArgs),
    /// Distill the ensemble into the base model with weighted pseudo-labels.
    Distill(DistillArgs),
    /// Count objects in probability maps.
    Count(CountArgs),
    /// Build eroded training targets from instance maps.
    Targets(TargetsArgs),
    /// Statistical diagnostics.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Rerun a recorded command and verify its artifacts.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Tabular,
    Blobs,
    Images,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    /// JSON generator spec; defaults are used for missing fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Explained-variance fraction, component count (`count:K`), or `all`.
    #[arg(long, default_value = "0.99")]
    pub retain: String,
    /// Dataset whose projections set the per-component ranges.
    #[arg(long)]
    pub range_ref: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyArg {
    Constant,
    Incremental,
}

#[derive(Debug, Args, Serialize)]
pub struct NoiseArgs {
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Ensemble size; 15, or 100 for regression, when unset.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum, default_value = "constant")]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub sigma_cap: Option<f64>,
    /// Clamp reconstructed candidates to `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub clamp: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-6)]
    pub var_floor: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// MLP checkpoint, or `exec:<command>` for an external model.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub subspace: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AutoSigmaArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub subspace: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.15,0.2,0.3,0.5")]
    pub grid: Vec<f64>,
    /// Segmentation confidence threshold; 0.8 constant, 0.75 incremental when unset.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DistillArgs {
    /// Pretrained MLP checkpoint (teacher base and student start).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub subspace: PathBuf,
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long)]
    pub unlabeled: PathBuf,
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long = "lambda", default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Threshold teacher probabilities into hard targets.
    #[arg(long)]
    pub hard_labels: bool,
    /// Ignore the uncertainty weights.
    #[arg(long)]
    pub unweighted: bool,
    /// Reinitialize the student instead of fine-tuning the checkpoint.
    #[arg(long)]
    pub restart: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CountArgs {
    /// Probability maps, `[H, W]` or `[n, H, W]`.
    #[arg(long)]
    pub maps: PathBuf,
    /// True counts `[n]` for the error report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Side of the square structuring element.
    #[arg(long, default_value_t = 3)]
    pub elem: usize,
    #[arg(long, default_value_t = 1)]
    pub iters: usize,
    #[arg(long, default_value_t = 4)]
    pub min_area: usize,
    #[arg(long, default_value_t = 8)]
    pub connectivity: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TargetsArgs {
    /// Instance maps, `[H, W]` or `[n, H, W]`.
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub elem: usize,
    #[arg(long, default_value_t = 1)]
    pub iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "analysis", rename_all = "kebab-case")]
pub enum AnalyzeCommand {
    /// Bias, variance and error of the ensemble mean against sigma.
    BiasVariance(BiasVarianceArgs),
    /// Eigenvalues of the latent covariance of perturbations.
    Spectrum(SpectrumArgs),
    /// Correlation between ensemble std and absolute error.
    StdError(StdErrorArgs),
    /// How much of an injected pattern survives reconstruction.
    StructuredNoise(StructuredNoiseArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BiasVarianceArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub subspace: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.15,0.2,0.3,0.5")]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 15)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "constant,incremental")]
    pub strategies: Vec<StrategyArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineArg {
    None,
    Jitter,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub subspace: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, value_enum, default_value = "jitter")]
    pub baseline: BaselineArg,
    #[arg(long, default_value_t = 0.1)]
    pub contrast: f64,
    #[arg(long, default_value_t = 0.1)]
    pub brightness: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StdErrorArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub subspace: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StructuredNoiseArgs {
    /// Clean fit rows (dataset container).
    #[arg(long)]
    pub fit: PathBuf,
    /// Clean test rows (dataset container).
    #[arg(long)]
    pub test: PathBuf,
    /// Pattern vector `[d]`.
    #[arg(long)]
    pub pattern: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    #[arg(long, default_value = "0.99")]
    pub retain: String,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = 0.1)]
    pub contrast: f64,
    #[arg(long, default_value_t = 0.1)]
    pub brightness: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    pub provenance: PathBuf,
    /// Write the rerun here instead of over the recorded output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
