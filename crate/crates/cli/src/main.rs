//! `dermgan`: train, evaluate and inspect the lesion-attribute GAN.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O or missing
//! input, 4 numeric failure (non-finite loss, failed gradient check),
//! 5 integrity failure (corrupt checkpoint).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dermgan_core::gradcheck::Precision;
use dermgan_core::EmptyPolicy;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_INTEGRITY: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "dermgan", version, about = "Lesion photo to attribute-mask GAN")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train a generator/discriminator pair.
    Train(TrainArgs),
    /// Score a checkpoint's predictions with per-attribute Jaccard indices.
    Eval(EvalArgs),
    /// Pack per-attribute mask files into two RGB images per photo.
    Pack(PackArgs),
    /// Split packed RGB images back into per-attribute mask files.
    Unpack(PackArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Predict packed masks for one photo.
    Predict(PredictArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// One-channel discriminator.
    Exp1,
    /// Six-channel discriminator.
    Exp2,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root with images/ and masks/ (or packed/).
    #[arg(long, conflicts_with = "synth", required_unless_present_any = ["synth", "manifest"])]
    pub data_dir: Option<PathBuf>,
    /// Generate this many synthetic samples into <out>/data and train on them.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub synth: Option<u64>,
    /// Seed of the synthetic samples (default: --seed).
    #[arg(long, requires = "synth")]
    pub synth_seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Replay the run described by a manifest.
    #[arg(long, conflicts_with_all = [
        "data_dir", "synth", "synth_seed", "preset", "disc_channels", "image_size", "base_width",
        "epochs", "lambda_l1", "lr", "beta1", "beta2", "batch_size", "d_loss_weight", "seed",
        "split", "checkpoint_every",
    ])]
    pub manifest: Option<PathBuf>,
    /// Preset experiment; explicit flags override it.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Discriminator output channels, 1 or 6.
    #[arg(long, value_parser = parse_disc_channels)]
    pub disc_channels: Option<usize>,
    /// One of 32, 64, 128, 256.
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub base_width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda_l1: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Weight on the summed discriminator terms.
    #[arg(long)]
    pub d_loss_weight: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training fraction (default 0.75 for --data-dir, 1.0 for --synth).
    #[arg(long)]
    pub split: Option<f64>,
    /// Also write checkpoint_epochNNNN.bin every this many epochs.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub checkpoint_every: Option<u64>,
}

fn parse_disc_channels(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n @ (1 | 6)) => Ok(n),
        _ => Err(format!("`{s}` is not a valid channel count; expected one of {{1, 6}}")),
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Part {
    All,
    Train,
    Test,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    One,
    Zero,
    Skip,
}

impl From<PolicyArg> for EmptyPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::One => EmptyPolicy::One,
            PolicyArg::Zero => EmptyPolicy::Zero,
            PolicyArg::Skip => EmptyPolicy::Skip,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Directory for metrics.json, metrics.txt and grid.png.
    #[arg(long)]
    pub out: PathBuf,
    /// Which part of the train/test split to score.
    #[arg(long, value_enum, default_value = "all")]
    pub part: Part,
    /// Training fraction used to rebuild the split.
    #[arg(long, default_value_t = 0.75)]
    pub split: f64,
    /// Seed used to rebuild the split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Score of an attribute absent from both truth and prediction.
    #[arg(long, value_enum, default_value = "one")]
    pub empty_policy: PolicyArg,
    /// Pool intersections and unions over the set instead of averaging per image.
    #[arg(long)]
    pub pooled: bool,
    /// Generator passes averaged before thresholding.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub eval_samples: u64,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
    /// Also write an image grid (photo | true packs | predicted packs).
    #[arg(long)]
    pub grid: bool,
}

#[derive(Args, Debug)]
pub struct PackArgs {
    /// Dataset root to read.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Root to write into.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
    Both,
}

impl PrecisionArg {
    pub fn list(self) -> Vec<Precision> {
        match self {
            PrecisionArg::F32 => vec![Precision::F32],
            PrecisionArg::F64 => vec![Precision::F64],
            PrecisionArg::Both => vec![Precision::F32, Precision::F64],
        }
    }
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Suite to run; repeatable.
    #[arg(long = "op", required_unless_present = "all", conflicts_with = "all")]
    pub ops: Vec<String>,
    /// Run every suite.
    #[arg(long)]
    pub all: bool,
    #[arg(long, value_enum, default_value = "both")]
    pub precision: PrecisionArg,
    /// Central-difference step.
    #[arg(long, default_value_t = dermgan_core::gradcheck::DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale the tanh derivative by 1.1 to check that failures are caught.
    #[arg(long, hide = true)]
    pub break_tanh: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Photo to segment (.jpg, .jpeg or .png).
    #[arg(long)]
    pub image: PathBuf,
    /// Directory for the two packed PNGs.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator passes averaged before thresholding.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub eval_samples: u64,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Pack(a) => commands::pack(a),
        Command::Unpack(a) => commands::unpack(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Predict(a) => commands::predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
