use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use moft_core::MoftError;

mod commands;
mod config;

use config::RunConfig;

/// Marks an error as a usage mistake (exit status 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "moft-kit", version, about = "Motion feature extraction, analysis and guidance on synthetic video latents")]
#[command(after_help = concat!(
    "Exit status: 0 ok, 1 usage error, 2 data or validation error, 3 guidance diverged.\n",
    "MOFT_THREADS caps the worker threads. Run `moft-kit keys` for the config keys."
))]
struct Cli {
    /// Plain-text key=value config file
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate panning latent videos and a manifest
    Synth(SynthArgs),
    /// Rank motion channels from a synth manifest and write a profile
    Calibrate(CalibrateArgs),
    /// Extract the motion feature of a latent video
    Extract(ExtractArgs),
    /// Per-frame channel values at a point or pooled over a mask
    Trace(TraceArgs),
    /// Cosine similarity of one reference point against a target
    Heatmap(HeatmapArgs),
    /// Synthesize a reference motion feature from a direction schedule
    SynthRef(SynthRefArgs),
    /// Steer a latent video toward a reference motion
    Guide(GuideArgs),
    /// Drag a point along a straight trajectory
    Drag(DragArgs),
    /// Motion fidelity between two sets of tracklets
    Fidelity(FidelityArgs),
    /// Compare analytic gradients with finite differences
    Gradcheck(GradcheckArgs),
    /// List config keys and defaults
    Keys,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Motion class as `label:schedule` or a direction word (repeatable; default right, left, up, down)
    #[arg(long = "pattern")]
    pub patterns: Vec<String>,
    /// Scenes per class
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// Manifest written by `synth`
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of channels to keep
    #[arg(long)]
    pub q: Option<f64>,
}

#[derive(Args)]
pub struct ExtractArgs {
    /// Latent video (MFT1)
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TraceArgs {
    /// Latent video (MFT1), featurized before tracing
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub channel: usize,
    /// Trace at `row,col`
    #[arg(long, conflicts_with = "mask")]
    pub point: Option<String>,
    /// Average over the white pixels of a PGM mask
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct HeatmapArgs {
    /// Reference motion feature
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Reference point `row,col`
    #[arg(long)]
    pub point: String,
    /// Target motion feature
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SynthRefArgs {
    /// `dx,dy;dx,dy;...` or `right×8,left×7`
    #[arg(long)]
    pub schedule: String,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GuideArgs {
    /// Initial latent video
    #[arg(long)]
    pub init: PathBuf,
    /// Reference motion feature
    #[arg(long = "ref", required_unless_present = "schedule")]
    pub reference: Option<PathBuf>,
    /// Direction schedule, synthesized with `--profile`
    #[arg(long, conflicts_with = "reference", requires = "profile")]
    pub schedule: Option<String>,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// PGM region mask (default: whole frame)
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Keep gradients on the first n frames, or `all`
    #[arg(long)]
    pub clip_frames: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Step log CSV (default: log.csv in the output directory)
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct DragArgs {
    #[arg(long)]
    pub init: PathBuf,
    /// Start point `row,col`
    #[arg(long)]
    pub start: String,
    /// Target point `row,col`
    #[arg(long)]
    pub target: String,
    /// Profile for the motion term (not needed with mode=point)
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// PGM region mask (default: a capsule around the trajectory)
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub t1: Option<usize>,
    #[arg(long)]
    pub t2: Option<usize>,
    #[arg(long)]
    pub t3: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct FidelityArgs {
    /// Tracklet file of the generated video
    #[arg(long, required_unless_present = "video", conflicts_with = "video")]
    pub generated: Option<PathBuf>,
    /// Latent video to track on a grid
    #[arg(long)]
    pub video: Option<PathBuf>,
    /// Reference tracklet file
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub reference: Option<PathBuf>,
    /// Synth manifest; reference tracklets follow its displacements
    #[arg(long, requires = "video")]
    pub manifest: Option<PathBuf>,
    /// Manifest line (0-based; default: the line naming the video, else 0)
    #[arg(long)]
    pub entry: Option<usize>,
    /// Print on the 0 to 100 display scale
    #[arg(long)]
    pub display: bool,
    /// Also write the tracklets here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use this profile's channels (default: the network's motion channels)
    #[arg(long)]
    pub profile: Option<PathBuf>,
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match cli.command {
        Command::Drag(_) => RunConfig::drag_defaults(),
        _ => RunConfig::defaults(),
    };
    if let Some(path) = &cli.config {
        cfg.merge_file(path)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!(Usage(format!("--set expects KEY=VALUE, got {kv:?}"))))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MOFT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!(Usage(format!("MOFT_THREADS must be a positive integer, got {raw:?}"))))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow!("thread pool: {e}"))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let cfg = base_config(&cli)?;
    match cli.command {
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Calibrate(a) => commands::calibrate(cfg, a),
        Command::Extract(a) => commands::extract(cfg, a),
        Command::Trace(a) => commands::trace(cfg, a),
        Command::Heatmap(a) => commands::heatmap(cfg, a),
        Command::SynthRef(a) => commands::synth_ref(cfg, a),
        Command::Guide(a) => commands::guide(cfg, a),
        Command::Drag(a) => commands::drag(cfg, a),
        Command::Fidelity(a) => commands::fidelity(cfg, a),
        Command::Gradcheck(a) => commands::gradcheck(cfg, a),
        Command::Keys => {
            print!("{}", config::describe_keys());
            Ok(())
        }
    }
}

fn exit_status(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<MoftError>() {
        Some(MoftError::Divergence { .. }) => 3,
        _ => 2,
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_status(&e))
        }
    }
}
