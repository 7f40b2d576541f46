//! Intention-branched gaze predictor: a low-resolution 3D-convolutional COARSE
//! stage, nearest upsampling, and a full-resolution 2D REFINE stage, one
//! independent set of weights per driving command.

use rand::Rng;
use rayon::prelude::*;

use super::params::{Gradients, Init, ParamSpec, ParameterSet};
use super::tape::{Graph, Var};
use super::tensor::Tensor;
use super::HighLevelCommand;
use crate::attention::AttentionMap;
use crate::error::{Error, Result};
use crate::masking::Image;

/// Training schedule for the optional second stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GazeSchedule {
    SinglePhase,
    /// The first `stream_steps` steps train each stream on its own output,
    /// later steps fine-tune the fused prediction.
    TwoPhase {
        stream_steps: usize,
    },
}

/// What the loss of a training step is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GazePhase {
    /// Each stream is supervised through its own softmax.
    Streams,
    /// The fused prediction is supervised.
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeNetConfig {
    pub clip_length: usize,
    /// Full input size (width, height).
    pub input_size: (usize, usize),
    /// COARSE working size, also the crop size.
    pub coarse_size: (usize, usize),
    pub coarse_widths: Vec<usize>,
    pub refine_width: usize,
    /// Adds the frame-difference stream fused by a learned per-pixel blend.
    pub difference_stream: bool,
    pub crop_stream: bool,
    pub schedule: GazeSchedule,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl Default for GazeNetConfig {
    fn default() -> Self {
        Self {
            clip_length: 4,
            input_size: (64, 64),
            coarse_size: (16, 16),
            coarse_widths: vec![8, 8],
            refine_width: 8,
            difference_stream: false,
            crop_stream: true,
            schedule: GazeSchedule::SinglePhase,
            learning_rate: 1e-2,
            epsilon: 1e-7,
        }
    }
}

impl GazeNetConfig {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.input_size;
        let (rw, rh) = self.coarse_size;
        if self.clip_length == 0 {
            return Err(Error::invalid("clip length must be at least 1"));
        }
        if w == 0 || h == 0 || rw == 0 || rh == 0 {
            return Err(Error::invalid("gaze net sizes must be positive"));
        }
        if rw > w || rh > h {
            return Err(Error::invalid(format!(
                "coarse size {rw}x{rh} exceeds input size {w}x{h}"
            )));
        }
        if w % rw != 0 || h % rh != 0 || w / rw != h / rh {
            return Err(Error::invalid(format!(
                "input size {w}x{h} must be one integer multiple of coarse size {rw}x{rh}"
            )));
        }
        if self.coarse_widths.is_empty() || self.coarse_widths.iter().chain([&self.refine_width]).any(|c| *c == 0) {
            return Err(Error::invalid(
                "channel widths must be positive and COARSE needs a layer",
            ));
        }
        if self.difference_stream && self.clip_length < 2 {
            return Err(Error::invalid(
                "the difference stream needs clips of at least two frames",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }

    pub fn scale_factor(&self) -> usize {
        self.input_size.0 / self.coarse_size.0
    }

    pub fn phase_at(&self, step: usize) -> GazePhase {
        match self.schedule {
            GazeSchedule::TwoPhase { stream_steps } if self.difference_stream && step < stream_steps => {
                GazePhase::Streams
            }
            _ => GazePhase::Joint,
        }
    }

    /// Shape of an input clip: `[N, 3, H, W]`.
    pub fn clip_shape(&self) -> [usize; 4] {
        [self.clip_length, 3, self.input_size.1, self.input_size.0]
    }
}

/// One supervised example: a clip `[N, 3, H, W]` ending at the labelled frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeSample {
    pub clip: Tensor,
    pub command: HighLevelCommand,
    pub truth: AttentionMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Rgb,
    Difference,
}

impl Stream {
    fn as_str(self) -> &'static str {
        match self {
            Stream::Rgb => "rgb",
            Stream::Difference => "diff",
        }
    }
}

fn branch_prefix(command: HighLevelCommand) -> Result<String> {
    if command == HighLevelCommand::NoCommand {
        return Err(Error::invalid(
            "the gaze net has no branch for frames without a command",
        ));
    }
    Ok(format!("gaze.{command}"))
}

fn conv_spec(name: String, shape: &[usize]) -> ParamSpec {
    let fan_in: usize = shape[1..].iter().product();
    let fan_out = shape[0] * shape[2..].iter().product::<usize>();
    ParamSpec::new(
        name,
        shape,
        Init::Xavier {
            fan_in,
            fan_out,
            gain: 1.0,
        },
    )
}

/// Parameter declarations for all four command branches.
pub fn gaze_param_specs(cfg: &GazeNetConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let mut specs = Vec::new();
    let streams: &[Stream] = if cfg.difference_stream {
        &[Stream::Rgb, Stream::Difference]
    } else {
        &[Stream::Rgb]
    };
    for cmd in HighLevelCommand::GAZE_BRANCHES {
        let branch = branch_prefix(cmd)?;
        for stream in streams {
            let p = format!("{branch}.{}", stream.as_str());
            let mut c_in = 3;
            for (i, &c) in cfg.coarse_widths.iter().enumerate() {
                specs.push(conv_spec(format!("{p}.coarse{i}.w"), &[c, c_in, 3, 3, 3]));
                specs.push(ParamSpec::new(format!("{p}.coarse{i}.b"), &[c], Init::Zeros));
                c_in = c;
            }
            specs.push(conv_spec(format!("{p}.coarse_out.w"), &[1, c_in, 3, 3]));
            specs.push(ParamSpec::new(format!("{p}.coarse_out.b"), &[1], Init::Zeros));
            specs.push(conv_spec(format!("{p}.refine0.w"), &[cfg.refine_width, 4, 3, 3]));
            specs.push(ParamSpec::new(
                format!("{p}.refine0.b"),
                &[cfg.refine_width],
                Init::Zeros,
            ));
            specs.push(conv_spec(format!("{p}.refine_out.w"), &[1, cfg.refine_width, 3, 3]));
            specs.push(ParamSpec::new(format!("{p}.refine_out.b"), &[1], Init::Zeros));
        }
        if cfg.difference_stream {
            let (w, h) = cfg.input_size;
            specs.push(ParamSpec::new(format!("{branch}.blend"), &[1, h, w], Init::Zeros));
        }
    }
    Ok(specs)
}

pub fn init_gaze_params(cfg: &GazeNetConfig, seed: u64) -> Result<ParameterSet> {
    ParameterSet::initialize(&gaze_param_specs(cfg)?, seed)
}

/// Stacks the last `n` frames ending at `t` into `[n, 3, H, W]`, repeating the
/// first frame when the history is shorter than `n`.
pub fn clip_from_frames(frames: &[&Image], t: usize, n: usize) -> Result<Tensor> {
    if t >= frames.len() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: frames.len(),
        });
    }
    let (w, h) = (frames[t].width(), frames[t].height());
    let mut data = Vec::with_capacity(n * 3 * w * h);
    for k in 0..n {
        let img = frames[(t + k + 1).saturating_sub(n)];
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::dims((w, h), (img.width(), img.height())));
        }
        let c = img.channels();
        for ch in 0..3 {
            data.extend(img.data().chunks_exact(c).map(|px| px[ch.min(c - 1)]));
        }
    }
    Tensor::new(vec![n, 3, h, w], data)
}

fn check_clip(clip: &Tensor, cfg: &GazeNetConfig) -> Result<()> {
    if clip.shape() != cfg.clip_shape() {
        return Err(Error::invalid(format!(
            "clip shape {:?} does not match the configured {:?}",
            clip.shape(),
            cfg.clip_shape()
        )));
    }
    Ok(())
}

/// Per-channel absolute differences of consecutive frames, `[N-1, 3, H, W]`.
fn difference_clip(clip: &Tensor) -> Tensor {
    let s = clip.shape();
    let frame = s[1] * s[2] * s[3];
    let d = clip.data();
    let data = (1..s[0])
        .flat_map(|k| (0..frame).map(move |i| (d[k * frame + i] - d[(k - 1) * frame + i]).abs().min(1.0)))
        .collect();
    Tensor::from_parts(vec![s[0] - 1, s[1], s[2], s[3]], data)
}

/// Box-filters and crops `[N, 3, H, W]` into the COARSE layout `[3, N, h, w]`.
/// The window starts at `(x0, y0)` in input pixels and spans `size·factor` pixels.
fn coarse_input(clip: &Tensor, factor: usize, origin: (usize, usize), size: (usize, usize)) -> Tensor {
    let s = clip.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (rw, rh) = size;
    let d = clip.data();
    let norm = (factor * factor) as f64;
    let mut out = vec![0.0; c * n * rh * rw];
    for k in 0..n {
        for ch in 0..c {
            let src = &d[(k * c + ch) * h * w..(k * c + ch + 1) * h * w];
            let dst = &mut out[(ch * n + k) * rh * rw..(ch * n + k + 1) * rh * rw];
            for y in 0..rh {
                for x in 0..rw {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        let row = (origin.1 + y * factor + dy) * w + origin.0 + x * factor;
                        acc += src[row..row + factor].iter().sum::<f64>();
                    }
                    dst[y * rw + x] = acc / norm;
                }
            }
        }
    }
    Tensor::from_parts(vec![c, n, rh, rw], out)
}

fn last_frame(clip: &Tensor) -> Tensor {
    let s = clip.shape();
    let frame = s[1] * s[2] * s[3];
    let start = (s[0] - 1) * frame;
    Tensor::from_parts(s[1..].to_vec(), clip.data()[start..start + frame].to_vec())
}

/// COARSE stage: `[3, N, h, w]` → logits `[1, h, w]`.
fn coarse(g: &mut Graph, params: &ParameterSet, prefix: &str, depth: usize, x: Var) -> Result<Var> {
    let mut x = x;
    for i in 0..depth {
        let w = g.param(params, &format!("{prefix}.coarse{i}.w"))?;
        let b = g.param(params, &format!("{prefix}.coarse{i}.b"))?;
        let y = g.conv3d(x, w, b, (1, 1, 1))?;
        x = g.tanh(y);
    }
    let pooled = g.mean_depth(x)?;
    let w = g.param(params, &format!("{prefix}.coarse_out.w"))?;
    let b = g.param(params, &format!("{prefix}.coarse_out.b"))?;
    g.conv2d(pooled, w, b, 1, 1)
}

/// REFINE stage on the upsampled COARSE logits and the last frame, with a residual path.
fn refine(g: &mut Graph, params: &ParameterSet, prefix: &str, up: Var, frame: Var) -> Result<Var> {
    let stacked = g.concat(&[up, frame])?;
    let w = g.param(params, &format!("{prefix}.refine0.w"))?;
    let b = g.param(params, &format!("{prefix}.refine0.b"))?;
    let hidden = g.conv2d(stacked, w, b, 1, 1)?;
    let hidden = g.tanh(hidden);
    let w = g.param(params, &format!("{prefix}.refine_out.w"))?;
    let b = g.param(params, &format!("{prefix}.refine_out.b"))?;
    let out = g.conv2d(hidden, w, b, 1, 1)?;
    g.add(out, up)
}

struct StreamOutput {
    full_logits: Var,
}

fn stream_forward(
    g: &mut Graph,
    params: &ParameterSet,
    prefix: &str,
    clip: &Tensor,
    cfg: &GazeNetConfig,
) -> Result<StreamOutput> {
    let x = g.input(coarse_input(clip, cfg.scale_factor(), (0, 0), cfg.coarse_size));
    let logits = coarse(g, params, prefix, cfg.coarse_widths.len(), x)?;
    let up = g.upsample(logits, cfg.scale_factor())?;
    let frame = g.input(last_frame(clip));
    let full_logits = refine(g, params, prefix, up, frame)?;
    Ok(StreamOutput { full_logits })
}

fn streams_of(clip: &Tensor, cfg: &GazeNetConfig) -> Vec<(Stream, Tensor)> {
    let mut out = vec![(Stream::Rgb, clip.clone())];
    if cfg.difference_stream {
        out.push((Stream::Difference, difference_clip(clip)));
    }
    out
}

/// Builds the forward graph and returns the per-stream full-resolution logits
/// and the fused logits.
fn forward_graph(
    g: &mut Graph,
    params: &ParameterSet,
    clip: &Tensor,
    command: HighLevelCommand,
    cfg: &GazeNetConfig,
) -> Result<(Vec<Var>, Var)> {
    cfg.validate()?;
    check_clip(clip, cfg)?;
    let branch = branch_prefix(command)?;
    let mut logits = Vec::new();
    for (stream, input) in streams_of(clip, cfg) {
        let prefix = format!("{branch}.{}", stream.as_str());
        logits.push(stream_forward(g, params, &prefix, &input, cfg)?.full_logits);
    }
    let fused = if cfg.difference_stream {
        let blend = g.param(params, &format!("{branch}.blend"))?;
        let alpha = g.sigmoid(blend);
        let beta = g.one_minus(alpha);
        let a = g.mul(alpha, logits[0])?;
        let b = g.mul(beta, logits[1])?;
        g.add(a, b)?
    } else {
        logits[0]
    };
    Ok((logits, fused))
}

/// Predicted attention map for the last frame of `clip` under `command`.
pub fn gaze_forward(
    clip: &Tensor,
    command: HighLevelCommand,
    params: &ParameterSet,
    cfg: &GazeNetConfig,
) -> Result<AttentionMap> {
    let mut g = Graph::new();
    let (_, fused) = forward_graph(&mut g, params, clip, command, cfg)?;
    let probs = g.softmax(fused);
    let (w, h) = cfg.input_size;
    AttentionMap::from_probabilities(w, h, g.value(probs).data().to_vec(), 1e-6)
}

/// Sum-pools a full-resolution truth map down to the COARSE grid.
fn pool_truth(truth: &AttentionMap, factor: usize, origin: (usize, usize), size: (usize, usize)) -> Vec<f64> {
    let (rw, rh) = size;
    let mut out = vec![0.0; rw * rh];
    for y in 0..rh {
        for x in 0..rw {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += truth.get(origin.0 + x * factor + dx, origin.1 + y * factor + dy);
                }
            }
            out[y * rw + x] = acc;
        }
    }
    out
}

fn check_truth(truth: &AttentionMap, cfg: &GazeNetConfig) -> Result<()> {
    if truth.dims() != cfg.input_size {
        return Err(Error::dims(cfg.input_size, truth.dims()));
    }
    Ok(())
}

/// Cropped-stream loss terms for a crop whose top-left corner is `origin`
/// (input pixels). The crop has the COARSE size and is taken from the raw
/// clip without resizing. Returns `None` when the truth holds no mass inside.
fn crop_terms(
    g: &mut Graph,
    params: &ParameterSet,
    sample: &GazeSample,
    cfg: &GazeNetConfig,
    origin: (usize, usize),
) -> Result<Option<Vec<Var>>> {
    let (rw, rh) = cfg.coarse_size;
    let truth = sample.truth.crop(origin.0, origin.1, rw, rh)?;
    if truth.is_empty() {
        return Ok(None);
    }
    let branch = branch_prefix(sample.command)?;
    let mut terms = Vec::new();
    for (stream, input) in streams_of(&sample.clip, cfg) {
        let prefix = format!("{branch}.{}", stream.as_str());
        let x = g.input(coarse_input(&input, 1, origin, cfg.coarse_size));
        let logits = coarse(g, params, &prefix, cfg.coarse_widths.len(), x)?;
        let probs = g.softmax(logits);
        terms.push(g.kl_loss(probs, truth.values(), cfg.epsilon)?);
    }
    Ok(Some(terms))
}

fn sum_terms(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut total = terms[0];
    for t in &terms[1..] {
        total = g.add(total, *t)?;
    }
    Ok(total)
}

/// Full-frame plus cropped-stream loss of one sample and its gradients.
pub fn gaze_sample_gradients(
    sample: &GazeSample,
    params: &ParameterSet,
    cfg: &GazeNetConfig,
    crop_origin: Option<(usize, usize)>,
    phase: GazePhase,
) -> Result<(f64, Gradients)> {
    check_truth(&sample.truth, cfg)?;
    let mut g = Graph::new();
    let (streams, fused) = forward_graph(&mut g, params, &sample.clip, sample.command, cfg)?;
    let mut terms = Vec::new();
    let supervised = match phase {
        GazePhase::Joint => vec![fused],
        GazePhase::Streams => streams,
    };
    for logits in supervised {
        let probs = g.softmax(logits);
        terms.push(g.kl_loss(probs, sample.truth.values(), cfg.epsilon)?);
    }
    if let Some(origin) = crop_origin {
        if let Some(crop) = crop_terms(&mut g, params, sample, cfg, origin)? {
            terms.extend(crop);
        }
    }
    let loss = sum_terms(&mut g, &terms)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("gaze loss".into()));
    }
    Ok((value, g.backward(loss)?))
}

/// KL of the COARSE prediction on the resized clip against the pooled truth.
pub fn coarse_full_frame_loss(sample: &GazeSample, params: &ParameterSet, cfg: &GazeNetConfig) -> Result<f64> {
    cfg.validate()?;
    check_clip(&sample.clip, cfg)?;
    check_truth(&sample.truth, cfg)?;
    let prefix = format!("{}.rgb", branch_prefix(sample.command)?);
    let mut g = Graph::new();
    let x = g.input(coarse_input(&sample.clip, cfg.scale_factor(), (0, 0), cfg.coarse_size));
    let logits = coarse(&mut g, params, &prefix, cfg.coarse_widths.len(), x)?;
    let probs = g.softmax(logits);
    let truth = pool_truth(&sample.truth, cfg.scale_factor(), (0, 0), cfg.coarse_size);
    let l = g.kl_loss(probs, &truth, cfg.epsilon)?;
    Ok(g.value(l).item())
}

/// Cropped-stream loss of the RGB stream at `origin`, or `None` for a crop without mass.
pub fn cropped_loss(
    sample: &GazeSample,
    params: &ParameterSet,
    cfg: &GazeNetConfig,
    origin: (usize, usize),
) -> Result<Option<f64>> {
    cfg.validate()?;
    check_clip(&sample.clip, cfg)?;
    check_truth(&sample.truth, cfg)?;
    let (rw, rh) = cfg.coarse_size;
    let (w, h) = cfg.input_size;
    if origin.0 + rw > w || origin.1 + rh > h {
        return Err(Error::invalid(format!("crop at {origin:?} leaves the frame")));
    }
    let mut g = Graph::new();
    Ok(crop_terms(&mut g, params, sample, cfg, origin)?.map(|t| g.value(t[0]).item()))
}

/// Draws a crop origin uniformly over all valid offsets.
pub fn random_crop_origin<R: Rng>(cfg: &GazeNetConfig, rng: &mut R) -> (usize, usize) {
    let (w, h) = cfg.input_size;
    let (rw, rh) = cfg.coarse_size;
    (rng.random_range(0..=w - rw), rng.random_range(0..=h - rh))
}

/// Mean loss and mean gradients over a batch. Crop offsets are drawn in batch
/// order before the per-sample work runs, so results do not depend on threading.
pub fn gaze_batch_gradients<R: Rng>(
    batch: &[GazeSample],
    params: &ParameterSet,
    cfg: &GazeNetConfig,
    rng: &mut R,
    phase: GazePhase,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    cfg.validate()?;
    let origins: Vec<Option<(usize, usize)>> = batch
        .iter()
        .map(|_| cfg.crop_stream.then(|| random_crop_origin(cfg, rng)))
        .collect();
    let per_sample: Vec<(f64, Gradients)> = batch
        .par_iter()
        .zip(origins.par_iter())
        .map(|(s, o)| gaze_sample_gradients(s, params, cfg, *o, phase))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = Gradients::default();
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        total.add_scaled(g, scale);
    }
    Ok((loss * scale, total))
}

/// One SGD step on the batch in the joint phase; returns the pre-step mean loss.
pub fn gaze_train_step<R: Rng>(
    batch: &[GazeSample],
    params: &mut ParameterSet,
    cfg: &GazeNetConfig,
    rng: &mut R,
) -> Result<f64> {
    gaze_train_step_in_phase(batch, params, cfg, rng, GazePhase::Joint)
}

pub fn gaze_train_step_in_phase<R: Rng>(
    batch: &[GazeSample],
    params: &mut ParameterSet,
    cfg: &GazeNetConfig,
    rng: &mut R,
    phase: GazePhase,
) -> Result<f64> {
    let (loss, grads) = gaze_batch_gradients(batch, params, cfg, rng, phase)?;
    params.accumulate(&grads, 1.0)?;
    params.sgd_step(cfg.learning_rate)?;
    Ok(loss)
}
