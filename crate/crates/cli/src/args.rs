use std::path::PathBuf;

use aniso_ldp::mechanisms::{Pairing, SensitivityConvention};
use aniso_ldp::models::{Activation, JacobianMode};
use aniso_ldp::pipeline::ClipMode;
use aniso_ldp::subspace::{NullMode, RankRule};
use aniso_ldp::Norm;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "aniso-ldp", version, about = "Anisotropic noise reshaping for local differential privacy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a reshaping transform from public records and a model.
    Calibrate(CalibrateArgs),
    /// Privatize every record of a CSV with g ∘ M ∘ f.
    Randomize(RandomizeArgs),
    /// Run an experiment sweep from a JSON config.
    Eval(EvalArgs),
    /// Estimate the privacy loss of a mechanism or a calibrated pipeline.
    Audit(AuditArgs),
    /// Compare a model's Jacobian with finite differences.
    Check(CheckArgs),
    /// Fit a downstream model on public records.
    Fit(FitArgs),
    /// Write a synthetic public/private split as CSV.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub public: PathBuf,
    /// Transform JSON to write; a `.meta.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Columns of the public CSV that are not features (repeatable).
    #[arg(long)]
    pub exclude: Vec<String>,
    /// Calibration options as JSON; flags override its fields.
    #[arg(long)]
    pub options: Option<PathBuf>,
    #[arg(long)]
    pub percentile: Option<f64>,
    /// `fixed:<r>` or `energy:<tau>`.
    #[arg(long)]
    pub rank: Option<RankRule>,
    /// Number of public records the Jacobian is averaged over.
    #[arg(long)]
    pub samples: Option<usize>,
    /// `floor` or `fixed:<c>`.
    #[arg(long)]
    pub null_mode: Option<NullMode>,
    #[arg(long, value_enum)]
    pub jacobian_mode: Option<JacobianModeArg>,
}

#[derive(Args, Debug)]
pub struct RandomizeArgs {
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// laplace, gaussian, privunit2, privunitg, cw (cw-laplace[:mse-optimal]).
    #[arg(long, default_value = "laplace")]
    pub mechanism: String,
    #[arg(long)]
    pub epsilon: f64,
    /// Only used by the Gaussian mechanism.
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub norm: Option<NormArg>,
    #[arg(long, value_enum, conflicts_with = "no_clip")]
    pub clip: Option<ClipArg>,
    /// Skip radial bounding; each coordinate is kept inside the range of
    /// the pulled-back public data instead.
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long, value_enum, default_value = "diameter")]
    pub convention: ConventionArg,
    /// Columns copied through unchanged (repeatable).
    #[arg(long)]
    pub exclude: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Experiment config JSON.
    pub config: PathBuf,
    /// Results CSV; a `.meta.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the mean (std) table; printed when omitted.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long, default_value = "laplace")]
    pub mechanism: String,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// Audit the calibrated pipeline g ∘ M ∘ f instead of the bare
    /// mechanism on the unit ball.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Dimension of the bare mechanism.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// First input, comma separated; defaults to an extreme point of the
    /// bounded domain.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub z: Option<Vec<f64>>,
    /// Second input; defaults to the reflection of the first.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub z_prime: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long, value_enum, default_value = "common")]
    pub pairing: PairingArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allowed excess of the estimate over ε before the audit fails.
    #[arg(long, default_value_t = 0.05)]
    pub slack: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Evaluation points; random points are drawn when omitted.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub exclude: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub random: usize,
    /// Random points are uniform on [−scale, scale]^m.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// ReLU points with a pre-activation this close to zero are skipped.
    #[arg(long, default_value_t = 1e-3)]
    pub kink_margin: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub public: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub exclude: Vec<String>,
    #[arg(long, value_enum, default_value = "mlp")]
    pub arch: ArchArg,
    #[arg(long, value_delimiter = ',', default_value = "10,32")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "relu")]
    pub activation: ActivationArg,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub step_size: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 4000)]
    pub n: usize,
    /// Defaults to 16 for regression and 64 for classification.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Receives public.csv and private.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Regression,
    Classification,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ArchArg {
    Linear,
    Mlp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Gelu,
    Tanh,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Gelu => Activation::Gelu,
            ActivationArg::Tanh => Activation::Tanh,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NormArg {
    L1,
    L2,
    Linf,
}

impl From<NormArg> for Norm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::L1 => Norm::L1,
            NormArg::L2 => Norm::L2,
            NormArg::Linf => Norm::Linf,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ClipArg {
    Radial,
    PerCoordinate,
    PublicBox,
}

impl From<ClipArg> for ClipMode {
    fn from(c: ClipArg) -> Self {
        match c {
            ClipArg::Radial => ClipMode::Radial,
            ClipArg::PerCoordinate => ClipMode::PerCoordinate,
            ClipArg::PublicBox => ClipMode::PublicBox,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ConventionArg {
    Diameter,
    Radius,
}

impl From<ConventionArg> for SensitivityConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Diameter => SensitivityConvention::Diameter,
            ConventionArg::Radius => SensitivityConvention::Radius,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PairingArg {
    Common,
    Independent,
}

impl From<PairingArg> for Pairing {
    fn from(p: PairingArg) -> Self {
        match p {
            PairingArg::Common => Pairing::Common,
            PairingArg::Independent => Pairing::Independent,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum JacobianModeArg {
    Logits,
    Softmax,
}

impl From<JacobianModeArg> for JacobianMode {
    fn from(j: JacobianModeArg) -> Self {
        match j {
            JacobianModeArg::Logits => JacobianMode::Logits,
            JacobianModeArg::Softmax => JacobianMode::Softmax,
        }
    }
}
