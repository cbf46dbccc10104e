use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "acmap", version, about = "Beamforming acoustic maps and replay-attack detection")]
pub struct Cli {
    /// Base seed for simulation, initialization and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (default: available parallelism). 1 runs serially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// JSON object of flag values; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a plane-wave recording, or a labeled dataset with a manifest.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Compute an acoustic map from a multi-channel WAV file.
    #[command(args_override_self = true)]
    Map(MapArgs),
    /// Train the classifier and write a checkpoint.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Multi-run EER evaluation on a manifest.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Summarize an acoustic map file.
    #[command(args_override_self = true)]
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ArrayArgs {
    /// Builtin layout (linear-2, linear-4, hex-6, hex-7) or a geometry JSON file.
    #[arg(long, default_value = "hex-6")]
    pub geometry: String,

    /// Microphone spacing in meters for builtin layouts.
    #[arg(long, default_value_t = 0.05)]
    pub spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizationArg {
    Max,
    Log,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct MapOptions {
    /// das, mvdr or srp-phat.
    #[arg(long, default_value = "das")]
    pub beamformer: String,

    /// MVDR diagonal loading relative to trace(R)/N.
    #[arg(long)]
    pub diag_load: Option<f64>,

    /// SRP-PHAT regularization relative to the largest snapshot magnitude.
    #[arg(long)]
    pub phat_eps: Option<f64>,

    #[arg(long)]
    pub n_fft: Option<usize>,

    #[arg(long)]
    pub hop: Option<usize>,

    /// hann or rectangular.
    #[arg(long, default_value = "hann")]
    pub window: String,

    #[arg(long, default_value_t = acmap::geometry::DEFAULT_AZIMUTHS)]
    pub azimuths: usize,

    #[arg(long, default_value_t = acmap::geometry::DEFAULT_ELEVATIONS)]
    pub elevations: usize,

    #[arg(long, value_enum, default_value_t = NormalizationArg::Max)]
    pub normalization: NormalizationArg,

    /// Floor of the log normalization, dB below the band maximum.
    #[arg(long, default_value_t = 60.0)]
    pub floor_db: f64,

    /// Explicit bands as "lo-hi,lo-hi,..." in Hz (default: four bands clipped to Nyquist).
    #[arg(long)]
    pub bands: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SampleFormatArg {
    Int16,
    Int32,
    Float32,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub array: ArrayArgs,

    /// Source azimuth in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub az: f64,

    /// Source elevation in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub el: f64,

    /// tone:<hz>, noise:<lo>-<hi> or speech:<f0>[:<harmonics>].
    #[arg(long, default_value = "tone:1000")]
    pub signal: String,

    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,

    #[arg(long, default_value_t = 16000)]
    pub fs: u32,

    /// Per-channel white-noise SNR in dB; noise-free when absent.
    #[arg(long, allow_negative_numbers = true)]
    pub snr: Option<f64>,

    #[arg(long, default_value_t = 0.5)]
    pub amplitude: f64,

    #[arg(long, value_enum, default_value_t = SampleFormatArg::Float32)]
    pub format: SampleFormatArg,

    /// Output WAV (single recording).
    #[arg(long, conflicts_with_all = ["dataset", "out_dir"])]
    pub out: Option<PathBuf>,

    /// Recordings per class for a synthetic dataset.
    #[arg(long, requires = "out_dir")]
    pub dataset: Option<usize>,

    /// Dataset directory; receives the WAV files and manifest.csv.
    #[arg(long, requires = "dataset")]
    pub out_dir: Option<PathBuf>,

    /// Device column of the dataset manifest.
    #[arg(long, default_value = "D1")]
    pub device: String,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// Multi-channel WAV file.
    #[arg(long)]
    pub input: PathBuf,

    #[command(flatten)]
    pub array: ArrayArgs,

    #[command(flatten)]
    pub map: MapOptions,

    /// Split the recording into chunks of at most this many seconds, one map each.
    #[arg(long)]
    pub max_seconds: Option<f64>,

    /// Output map (.amap, with a .amap.json sidecar).
    #[arg(long)]
    pub out: PathBuf,

    /// Also render one band as PNG (or PGM with a .pgm extension).
    #[arg(long)]
    pub png: Option<PathBuf>,

    #[arg(long, default_value_t = 1)]
    pub png_band: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOptions {
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,

    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,

    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,

    /// adam or sgd.
    #[arg(long, default_value = "adam")]
    pub optimizer: String,

    #[arg(long, default_value_t = 0.05)]
    pub mixup_alpha: f64,

    /// Train in f64 instead of f32.
    #[arg(long)]
    pub f64: bool,

    /// Stop once training accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SplitOptions {
    /// Manifest CSV (wav_path,label,device,environment,speaker_id,split).
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    #[arg(long, default_value = "D1")]
    pub device: String,

    /// env-dependent or env-independent.
    #[arg(long, default_value = "env-dependent")]
    pub mode: String,

    /// Held-out environment for env-independent mode.
    #[arg(long)]
    pub holdout: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub split: SplitOptions,

    /// Train on this many synthetic recordings per class instead of a manifest.
    #[arg(long, conflicts_with = "manifest")]
    pub synthetic: Option<usize>,

    /// Sample rate of synthetic recordings.
    #[arg(long, default_value_t = 16000)]
    pub fs: u32,

    #[command(flatten)]
    pub array: ArrayArgs,

    #[command(flatten)]
    pub map: MapOptions,

    #[command(flatten)]
    pub train: TrainOptions,

    /// Checkpoint path (a .json manifest is written next to it).
    #[arg(long)]
    pub out: PathBuf,

    /// Per-epoch history as JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub split: SplitOptions,

    #[command(flatten)]
    pub array: ArrayArgs,

    #[command(flatten)]
    pub map: MapOptions,

    #[command(flatten)]
    pub train: TrainOptions,

    /// Independent training runs (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 5)]
    pub runs: usize,

    /// Score a trained checkpoint instead of training.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Map file (.amap).
    pub path: PathBuf,

    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}
