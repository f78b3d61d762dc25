//! `vimq`: quantize Vision Mamba models, pack weights, run the simulated
//! datapaths and compare them with the float path.

mod commands;
mod config;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use vimq_core::aux::NormKind;
use vimq_core::model::{ClsPosition, Variant};
use vimq_core::ssm::ExpMode;

use config::FileConfig;

/// Exit code for rejected inputs, flags or files.
pub const EXIT_VALIDATION: u8 = 2;
/// Exit code for a failed numerical invariant.
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Quantized,
    Float,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Cosine,
    Top1,
}

/// Parses any of the core's lowercase serde enums.
fn lower<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|e| e.to_string())
}

#[derive(Parser)]
#[command(name = "vimq", version, about = "W4A8 APoT quantization and datapath simulation for Vision Mamba encoders")]
struct Cli {
    /// TOML file supplying defaults for flags not given on the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Gaussian-initialized float model.
    Init(InitArgs),
    /// Write random input images (and optional labels).
    GenInput(GenInputArgs),
    /// Record per-site activation maxima of a float model.
    Calibrate(CalibrateArgs),
    /// Smooth and APoT-quantize a float model.
    Quantize(QuantizeArgs),
    /// Write the packed weight blobs of a quantized model.
    Pack(PackArgs),
    /// Run inference and report logits, counters and path comparison.
    Infer(InferArgs),
    /// Sweep weight bit-widths and block sizes.
    Dse(DseArgs),
    /// Run the oracle-equivalence suite.
    Selftest(SelftestArgs),
}

#[derive(Args)]
pub struct InitArgs {
    #[arg(long, value_parser = lower::<Variant>)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, value_parser = lower::<ClsPosition>)]
    pub cls: Option<ClsPosition>,
    #[arg(long, value_parser = lower::<NormKind>)]
    pub norm: Option<NormKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GenInputArgs {
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Also write uniform random labels below this class count.
    #[arg(long)]
    pub labels: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone)]
pub struct EngineArgs {
    #[arg(long, value_parser = lower::<ExpMode>)]
    pub exp_mode: Option<ExpMode>,
    /// SSM state tile width.
    #[arg(long)]
    pub nb: Option<usize>,
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Args, Clone)]
pub struct QuantArgs {
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub block: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f32>,
    #[arg(long)]
    pub no_smooth: bool,
    /// Calibrated static activation scales instead of runtime maxima.
    #[arg(long)]
    pub static_act: bool,
    /// One activation scale per tensor instead of per token.
    #[arg(long)]
    pub per_tensor_act: bool,
}

#[derive(Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Packed blob file; defaults to OUT with a `.vimqw` extension.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Per-layer MSE summary as JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub quant: QuantArgs,
}

#[derive(Args)]
pub struct PackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Packed blobs executed by the linear engine instead of repacking.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Float model for the float path; defaults to the dequantized model.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Engine counters as JSON lines.
    #[arg(long)]
    pub counters: Option<PathBuf>,
    #[arg(long)]
    pub logits: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Args)]
pub struct DseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    /// Evaluation images; defaults to 4 random images at the calibration size.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    pub bits: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    pub blocks: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Metric::Cosine)]
    pub metric: Metric,
    #[arg(long)]
    pub alpha: Option<f32>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Args)]
pub struct SelftestArgs {
    /// Flip one nibble of a packed blob before the LUT-GEMM check.
    #[arg(long)]
    pub inject_fault: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Raised when a check fails rather than an input being rejected.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<NumericalFailure>() {
            return EXIT_NUMERICAL;
        }
        if let Some(e) = cause.downcast_ref::<vimq_core::Error>() {
            return if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_VALIDATION };
        }
    }
    EXIT_VALIDATION
}

fn init_threads(file: &FileConfig) -> anyhow::Result<()> {
    let n = match std::env::var("VIMQ_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| anyhow::anyhow!("VIMQ_THREADS must be a positive integer, got `{v}`"))?),
        Err(_) => file.threads,
    };
    if let Some(n) = n {
        if n == 0 {
            anyhow::bail!("thread count must be ≥ 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    init_threads(&file)?;
    match cli.cmd {
        Command::Init(a) => commands::init(&a, &file),
        Command::GenInput(a) => commands::gen_input(&a, &file),
        Command::Calibrate(a) => commands::calibrate(&a, &file),
        Command::Quantize(a) => commands::quantize(&a, &file),
        Command::Pack(a) => commands::pack(&a),
        Command::Infer(a) => commands::infer(&a, &file),
        Command::Dse(a) => commands::dse(&a, &file),
        Command::Selftest(a) => selftest::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
