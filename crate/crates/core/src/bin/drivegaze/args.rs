use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drivegaze::dataset::LabelFilter;
use drivegaze::masking::MaskMode;
use drivegaze::model::AgentVariant;

#[derive(Parser, Debug)]
#[command(
    name = "drivegaze",
    version,
    about = "Gaze attention maps, attention masking and command-branched driving agents on synthetic driving data"
)]
pub struct Cli {
    /// Worker threads for per-frame work; 0 uses one per core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Validate the configuration and inputs, then exit without computing
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic episodes into a dataset directory
    Gen(GenArgs),
    /// Build fixation maps from the gaze logs (one AMAP file per frame under maps/)
    Maps(MapsArgs),
    /// Predict an attention map for every frame with a trained gaze net (files under pred/)
    Precompute(PrecomputeArgs),
    /// Mask every frame with its attention map (images under masked/<mode>/)
    Mask(MaskArgs),
    /// Train the command-branched gaze net
    TrainGaze(TrainGazeArgs),
    /// Train one driving agent variant
    TrainAgent(TrainAgentArgs),
    /// Score the gaze net and the center prior, overall and on driving frames only
    EvalGaze(EvalGazeArgs),
    /// Score trained agents: task-weighted MSE and MAE per variant
    EvalAgent(EvalAgentArgs),
    /// Train an agent and record held-out MSE and MAE against training step
    EvalSeries(EvalSeriesArgs),
}

/// Width and height written as `WxH`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size(pub usize, pub usize);

pub fn parse_size(s: &str) -> Result<Size, String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let w = w.parse().map_err(|_| format!("bad width in '{s}'"))?;
    let h = h.parse().map_err(|_| format!("bad height in '{s}'"))?;
    Ok(Size(w, h))
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Base seed; episode k uses scene and episode seed `seed * 1000 + k`
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frames per episode
    #[arg(long, default_value_t = 500)]
    pub frames: usize,
    /// Number of episodes
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    /// Number of final episodes held out for testing (recorded in split.txt)
    #[arg(long, default_value_t = 0)]
    pub test_episodes: usize,
    /// Image size
    #[arg(long, value_parser = parse_size, default_value = "64x64")]
    pub size: Size,
    /// Road segments per scene
    #[arg(long, default_value_t = 12)]
    pub segments: usize,
    /// Fraction of frames spent waiting in traffic
    #[arg(long, default_value_t = 0.327)]
    pub traffic_fraction: f64,
    /// Standard deviation (m) of the pose perturbation; never recorded in controls
    #[arg(long, default_value_t = 0.0)]
    pub action_noise: f64,
    /// Probability of looking to the commanded side during turns
    #[arg(long, default_value_t = 0.8)]
    pub side_bias: f64,
    /// Dataset directory to write
    #[arg(long = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MapsArgs {
    /// Dataset directory
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Map size; defaults to the image size
    #[arg(long, value_parser = parse_size)]
    pub size: Option<Size>,
}

#[derive(Args, Debug, Clone)]
pub struct GazeNetArgs {
    /// Frames per input clip
    #[arg(long, default_value_t = 4)]
    pub clip_length: usize,
    /// Gaze net input size; frames are box-downsampled to it
    #[arg(long, value_parser = parse_size, default_value = "64x64")]
    pub net_size: Size,
    /// COARSE working size and crop size
    #[arg(long, value_parser = parse_size, default_value = "16x16")]
    pub coarse_size: Size,
    /// Channels of each COARSE 3D convolution
    #[arg(long, value_delimiter = ',', default_value = "8,8")]
    pub coarse_widths: Vec<usize>,
    /// Channels of the REFINE hidden layer
    #[arg(long, default_value_t = 8)]
    pub refine_width: usize,
    /// Add the frame-difference stream
    #[arg(long)]
    pub difference_stream: bool,
    /// Disable the cropped training stream
    #[arg(long)]
    pub no_crop_stream: bool,
    /// Train the two streams separately for this many steps before joint training
    #[arg(long)]
    pub stream_steps: Option<usize>,
    /// Gaze net SGD learning rate
    #[arg(long, default_value_t = 1e-2)]
    pub gaze_lr: f64,
}

#[derive(Args, Debug, Clone)]
pub struct AgentArgs {
    /// Agent input size; frames are box-downsampled to it
    #[arg(long, value_parser = parse_size, default_value = "32x32")]
    pub agent_size: Size,
    /// Steer, throttle, brake and speed weights
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.2,0.2,0.1")]
    pub task_weights: Vec<f64>,
    /// Agent SGD learning rate
    #[arg(long, default_value_t = 3e-2)]
    pub agent_lr: f64,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Optimization steps
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Samples per step
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Seeds initialization, batch order and crop offsets
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Where per-frame attention maps come from.
#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapSource {
    /// Gaze net predictions written by `precompute`
    Pred,
    /// Fixation maps rebuilt from the gaze logs
    Fixation,
}

#[derive(Args, Debug, Clone)]
pub struct MaskArgs {
    /// Dataset directory
    #[arg(long = "in")]
    pub input: PathBuf,
    /// hard, soft or baseline
    #[arg(long)]
    pub mode: MaskMode,
    /// Weight of the unmasked image in soft masking
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    /// Attention maps used for masking
    #[arg(long, value_enum, default_value_t = MapSource::Pred)]
    pub source: MapSource,
}

#[derive(Args, Debug)]
pub struct PrecomputeArgs {
    /// Dataset directory
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Gaze net checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub net: GazeNetArgs,
}

#[derive(Args, Debug)]
pub struct TrainGazeArgs {
    /// Dataset directory
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Checkpoint to write
    #[arg(long = "out")]
    pub out: PathBuf,
    /// Training frames: all or driving
    #[arg(long, default_value_t = LabelFilter::All)]
    pub filter: LabelFilter,
    /// Per-step training loss log
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[command(flatten)]
    pub net: GazeNetArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct TrainAgentArgs {
    /// Dataset directory
    #[arg(long = "in")]
    pub input: PathBuf,
    /// raw, hard, soft, baseline or dual
    #[arg(long)]
    pub variant: AgentVariant,
    /// Checkpoint to write
    #[arg(long = "out")]
    pub out: PathBuf,
    /// Weight of the unmasked image in soft masking
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    /// Attention maps used for masking
    #[arg(long, value_enum, default_value_t = MapSource::Pred)]
    pub source: MapSource,
    /// Per-step training loss log
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[command(flatten)]
    pub agent: AgentArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct EvalGazeArgs {
    /// Dataset directory
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Gaze net checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// KL regularization constant
    #[arg(long, default_value_t = 1e-7)]
    pub epsilon: f64,
    /// Also write the table as tab-separated values
    #[arg(long)]
    pub tsv: Option<PathBuf>,
    #[command(flatten)]
    pub net: GazeNetArgs,
}

#[derive(Args, Debug)]
pub struct EvalAgentArgs {
    /// Dataset directory
    #[arg(long = "in")]
    pub input: PathBuf,
    /// A trained agent as VARIANT=CHECKPOINT; repeat for each table row
    #[arg(long = "model", required = true, value_parser = parse_model)]
    pub models: Vec<(AgentVariant, PathBuf)>,
    /// Weight of the unmasked image in soft masking
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    /// Attention maps used for masking
    #[arg(long, value_enum, default_value_t = MapSource::Pred)]
    pub source: MapSource,
    /// Also write the table as tab-separated values
    #[arg(long)]
    pub tsv: Option<PathBuf>,
    #[command(flatten)]
    pub agent: AgentArgs,
}

pub fn parse_model(s: &str) -> Result<(AgentVariant, PathBuf), String> {
    let (v, p) = s
        .split_once('=')
        .ok_or_else(|| format!("expected VARIANT=CHECKPOINT, got '{s}'"))?;
    Ok((
        v.parse().map_err(|e: drivegaze::Error| e.to_string())?,
        PathBuf::from(p),
    ))
}

#[derive(Args, Debug)]
pub struct EvalSeriesArgs {
    /// Dataset directory
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Agent variant: raw, hard, soft, baseline or dual
    #[arg(long)]
    pub variant: AgentVariant,
    /// Evaluate every this many steps
    #[arg(long, default_value_t = 100)]
    pub every: usize,
    /// Series file (tab-separated step, mse, mae)
    #[arg(long = "out")]
    pub out: PathBuf,
    /// Weight of the unmasked image in soft masking
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    /// Attention maps used for masking
    #[arg(long, value_enum, default_value_t = MapSource::Pred)]
    pub source: MapSource,
    #[command(flatten)]
    pub agent: AgentArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}
