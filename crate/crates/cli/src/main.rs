mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rdc_core::error::RdcError;

use run_config::{RunConfig, SEED_ENV};

/// Rate-distortion-cognition controllable image codec.
#[derive(Parser, Debug)]
#[command(name = "rdc", version)]
struct Cli {
    /// `key=value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override, `key=value`; repeatable, applied after the file.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the procedural toy dataset as PNGs plus a manifest.
    MakeDataset(MakeDatasetArgs),
    /// Train the contrastive proxy encoder and fit its linear probe.
    PretrainProxy(PretrainProxyArgs),
    /// Rate-distortion warm-up followed by cognition-oriented training.
    TrainStage1(TrainStage1Args),
    /// Train the auxiliary branch with the primary branch frozen.
    TrainStage2(TrainStage2Args),
    /// Refit the probe on β = 1 reconstructions across the sweep α grid.
    FinetuneProbe(FinetuneProbeArgs),
    /// Encode one image into an `.rdc` container.
    Compress(CompressArgs),
    /// Decode an `.rdc` container at a chosen β.
    Decompress(DecompressArgs),
    /// Measure bpp, PSNR and probe accuracy at one (α, β).
    Eval(EvalArgs),
    /// Measure the full α × β trade-off surface.
    Sweep(SweepArgs),
    /// Pixel histograms, spectra and latent channel profiles.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
pub struct MakeDatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct PretrainProxyArgs {
    /// Manifest of `path,label` lines.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Probe checkpoint; defaults to `probe.ckpt` beside `--out`.
    #[arg(long)]
    pub probe_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainStage1Args {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub proxy: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from an existing codec checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainStage2Args {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FinetuneProbeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub proxy: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Quality index in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Auxiliary quality index in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub alpha_s: f64,
    /// Add the auxiliary stream (default when the model finished stage II).
    #[arg(long, conflicts_with = "no_aux")]
    pub aux: bool,
    #[arg(long)]
    pub no_aux: bool,
}

#[derive(Args, Debug)]
pub struct DecompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// 1 favours cognition, 0 favours fidelity.
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub proxy: PathBuf,
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    /// Auxiliary quality; omitted means no auxiliary stream.
    #[arg(long)]
    pub alpha_s: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub proxy: PathBuf,
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for the CSV and plots.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated α grid; overrides `sweep_alphas`.
    #[arg(long)]
    pub alphas: Option<String>,
    /// Comma-separated β grid; overrides `sweep_betas`.
    #[arg(long)]
    pub betas: Option<String>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha_s: f64,
    /// Image whose report is written in full.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(rdc) = err.downcast_ref::<RdcError>() else {
        return 1;
    };
    let mut e = rdc;
    while let RdcError::Cell { source, .. } = e {
        e = source;
    }
    match e {
        RdcError::Config(_) | RdcError::Range { .. } | RdcError::Parameter(_) | RdcError::PaddingRequired { .. } => 2,
        RdcError::Version(_) => 3,
        RdcError::Io(_) | RdcError::Image(_) => 4,
        RdcError::Corrupt { .. } => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = RunConfig::load(cli.config.as_deref(), &cli.overrides, std::env::var(SEED_ENV).ok())
        .map_err(anyhow::Error::from)
        .and_then(|cfg| match &cli.command {
            Command::MakeDataset(a) => commands::make_dataset(&cfg, a),
            Command::PretrainProxy(a) => commands::pretrain_proxy(&cfg, a),
            Command::TrainStage1(a) => commands::train_stage1(&cfg, a),
            Command::TrainStage2(a) => commands::train_stage2(&cfg, a),
            Command::FinetuneProbe(a) => commands::finetune_probe(&cfg, a),
            Command::Compress(a) => commands::compress(&cfg, a),
            Command::Decompress(a) => commands::decompress(&cfg, a),
            Command::Eval(a) => commands::eval(&cfg, a),
            Command::Sweep(a) => commands::sweep(&cfg, a),
            Command::Diagnose(a) => commands::diagnose(&cfg, a),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
