use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use microreg::registration::Variant;

#[derive(Debug, Parser)]
#[command(name = "microreg", version, about = "Stereo-microscope depth and label-coloured registration pipeline")]
pub struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// R, RCs, RCo or RCsCo.
    #[arg(long, global = true, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic bundle, frame sequence or calibration preset.
    Synth(SynthArgs),
    /// Fit linear and pinhole models to step logs; estimate a distortion field.
    Calibrate(CalibrateArgs),
    /// Stereo match a bundle and reconstruct its point cloud.
    Reconstruct(ReconstructArgs),
    /// Register the model of a bundle or sequence to every frame.
    Register(RegisterArgs),
    /// Compare registration results against reference poses.
    Evaluate(EvaluateArgs),
    /// Register every frame with all four method combinations.
    Bench(BenchArgs),
    /// Re-run a recorded command and check its outputs are identical.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    StepHeightPaper,
    ResolutionPaper,
    BowlPlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Surface {
    /// Dome with bumps and raised sutures.
    Relief,
    /// Dome only; sutures carry no relief.
    Smooth,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, conflicts_with = "frames")]
    pub preset: Option<Preset>,
    #[arg(long, value_enum, default_value = "relief")]
    pub surface: Surface,
    /// Write a registration sequence with this many frames.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Depth noise per point, mm.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Fraction of feature pixels given a wrong class.
    #[arg(long, default_value_t = 0.0)]
    pub mislabel: f64,
    /// Largest lateral pose perturbation, mm.
    #[arg(long, default_value_t = 5.0)]
    pub max_shift: f64,
    /// Largest in-plane rotation, degrees.
    #[arg(long, default_value_t = 15.0)]
    pub max_angle: f64,
    /// Largest depth perturbation, mm.
    #[arg(long, default_value_t = 1.0)]
    pub max_dz: f64,
    /// Model sampling grid, mm.
    #[arg(long, default_value_t = 0.12)]
    pub spacing: f64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Step log CSV (`z_true_mm,h_px`); repeatable.
    #[arg(long = "log")]
    pub logs: Vec<PathBuf>,
    /// Disparity of a flat target (PFM) for the distortion field.
    #[arg(long)]
    pub plane: Option<PathBuf>,
    #[arg(long)]
    pub calib: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Bundle directory with left.png and right.png.
    pub bundle: PathBuf,
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Distortion field CSV to compensate with.
    #[arg(long)]
    pub distortion: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Bundle or sequence directory.
    pub input: PathBuf,
    /// Disparity to use instead of the bundle's own (single bundles only).
    #[arg(long)]
    pub disparity: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// transforms.json written by `register`.
    #[arg(long)]
    pub results: PathBuf,
    /// Bundle or sequence holding the reference poses.
    #[arg(long)]
    pub reference: PathBuf,
    /// Per-frame timings; defaults to timings.json next to the results.
    #[arg(long)]
    pub timings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Sequence or bundle directory.
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// run.json of the run to repeat.
    pub manifest: PathBuf,
}
