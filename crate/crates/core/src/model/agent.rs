//! Command-conditioned driving agents: a convolutional image encoder (two for
//! the dual variant), a speed encoder, a fused trunk and five control heads.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::params::{Gradients, Init, ParamSpec, ParameterSet};
use super::tape::{Graph, Var};
use super::tensor::Tensor;
use super::HighLevelCommand;
use crate::error::{Error, Result};
use crate::masking::Image;
use crate::metrics::{ControlSignal, TaskWeights};

/// Which images the agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentVariant {
    Raw,
    Hard,
    Soft,
    Baseline,
    /// Raw and hard-masked images through two encoders.
    Dual,
}

impl AgentVariant {
    pub const ALL: [AgentVariant; 5] = [
        AgentVariant::Raw,
        AgentVariant::Hard,
        AgentVariant::Soft,
        AgentVariant::Baseline,
        AgentVariant::Dual,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgentVariant::Raw => "raw",
            AgentVariant::Hard => "hard",
            AgentVariant::Soft => "soft",
            AgentVariant::Baseline => "baseline",
            AgentVariant::Dual => "dual",
        }
    }

    pub fn input_count(&self) -> usize {
        match self {
            AgentVariant::Dual => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for AgentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown agent variant '{s}'")))
    }
}

/// One convolutional layer: output channels, square kernel, stride. Padding is `kernel / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub variant: AgentVariant,
    /// Image size (width, height) the agent consumes.
    pub input_size: (usize, usize),
    pub conv: Vec<ConvLayer>,
    pub feature_width: usize,
    pub speed_widths: [usize; 2],
    pub fused_widths: [usize; 2],
    pub head_width: usize,
    /// Scale of the speed input and of the speed output.
    pub speed_scale: f64,
    pub task_weights: TaskWeights,
    pub learning_rate: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: AgentVariant::Raw,
            input_size: (32, 32),
            conv: vec![
                ConvLayer {
                    channels: 8,
                    kernel: 5,
                    stride: 2,
                },
                ConvLayer {
                    channels: 16,
                    kernel: 3,
                    stride: 2,
                },
                ConvLayer {
                    channels: 16,
                    kernel: 3,
                    stride: 2,
                },
            ],
            feature_width: 64,
            speed_widths: [16, 16],
            fused_widths: [64, 64],
            head_width: 32,
            speed_scale: 10.0,
            task_weights: TaskWeights::default(),
            learning_rate: 3e-2,
        }
    }
}

impl AgentConfig {
    pub fn for_variant(variant: AgentVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.input_size;
        if w == 0 || h == 0 {
            return Err(Error::invalid("agent input size must be positive"));
        }
        if self.conv.is_empty() {
            return Err(Error::invalid("the image encoder needs at least one layer"));
        }
        if self
            .conv
            .iter()
            .any(|l| l.channels == 0 || l.kernel == 0 || l.stride == 0)
        {
            return Err(Error::invalid("conv layers need positive channels, kernel and stride"));
        }
        let widths = [self.feature_width, self.head_width]
            .into_iter()
            .chain(self.speed_widths)
            .chain(self.fused_widths);
        if widths.into_iter().any(|w| w == 0) {
            return Err(Error::invalid("dense widths must be positive"));
        }
        if !(self.speed_scale.is_finite() && self.speed_scale > 0.0) {
            return Err(Error::invalid("speed scale must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        self.encoder_output()?;
        Ok(())
    }

    /// Spatial size and channel count after the conv stack.
    fn encoder_output(&self) -> Result<(usize, usize, usize)> {
        let (mut w, mut h) = self.input_size;
        for l in &self.conv {
            let pad = l.kernel / 2;
            if w + 2 * pad < l.kernel || h + 2 * pad < l.kernel {
                return Err(Error::invalid("agent input too small for its conv stack"));
            }
            w = (w + 2 * pad - l.kernel) / l.stride + 1;
            h = (h + 2 * pad - l.kernel) / l.stride + 1;
        }
        Ok((self.conv.last().map_or(3, |l| l.channels), h, w))
    }

    fn encoder_names(&self) -> Vec<&'static str> {
        match self.variant {
            AgentVariant::Dual => vec!["agent.raw", "agent.masked"],
            _ => vec!["agent.image"],
        }
    }
}

fn dense(name: &str, out: usize, inp: usize) -> [ParamSpec; 2] {
    [
        ParamSpec::new(
            format!("{name}.w"),
            &[out, inp],
            Init::Xavier {
                fan_in: inp,
                fan_out: out,
                gain: 1.0,
            },
        ),
        ParamSpec::new(format!("{name}.b"), &[out], Init::Zeros),
    ]
}

fn head_name(command: HighLevelCommand) -> String {
    format!("agent.head.{command}")
}

pub fn agent_param_specs(cfg: &AgentConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let mut specs = Vec::new();
    let (c, h, w) = cfg.encoder_output()?;
    for enc in cfg.encoder_names() {
        let mut c_in = 3;
        for (i, l) in cfg.conv.iter().enumerate() {
            let fan_in = c_in * l.kernel * l.kernel;
            let fan_out = l.channels * l.kernel * l.kernel;
            specs.push(ParamSpec::new(
                format!("{enc}.conv{i}.w"),
                &[l.channels, c_in, l.kernel, l.kernel],
                Init::Xavier {
                    fan_in,
                    fan_out,
                    gain: 1.0,
                },
            ));
            specs.push(ParamSpec::new(format!("{enc}.conv{i}.b"), &[l.channels], Init::Zeros));
            c_in = l.channels;
        }
        specs.extend(dense(&format!("{enc}.features"), cfg.feature_width, c * h * w));
    }
    let [s0, s1] = cfg.speed_widths;
    specs.extend(dense("agent.speed0", s0, 1));
    specs.extend(dense("agent.speed1", s1, s0));
    let [f0, f1] = cfg.fused_widths;
    let joined = cfg.feature_width * cfg.encoder_names().len() + s1;
    specs.extend(dense("agent.fused0", f0, joined));
    specs.extend(dense("agent.fused1", f1, f0));
    for cmd in HighLevelCommand::ALL {
        let name = head_name(cmd);
        specs.extend(dense(&format!("{name}.hidden"), cfg.head_width, f1));
        specs.extend(dense(&format!("{name}.out"), 4, cfg.head_width));
    }
    Ok(specs)
}

pub fn init_agent_params(cfg: &AgentConfig, seed: u64) -> Result<ParameterSet> {
    ParameterSet::initialize(&agent_param_specs(cfg)?, seed)
}

/// One supervised example. `inputs` holds one image, or raw then masked for the dual variant.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSample {
    pub inputs: Vec<Image>,
    pub speed: f64,
    pub command: HighLevelCommand,
    pub target: ControlSignal,
}

fn image_tensor(img: &Image) -> Result<Tensor> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut data = Vec::with_capacity(3 * w * h);
    for ch in 0..3 {
        data.extend(img.data().chunks_exact(c).map(|px| px[ch.min(c - 1)]));
    }
    Tensor::new(vec![3, h, w], data)
}

fn dense_layer(g: &mut Graph, params: &ParameterSet, name: &str, x: Var, squash: bool) -> Result<Var> {
    let w = g.param(params, &format!("{name}.w"))?;
    let b = g.param(params, &format!("{name}.b"))?;
    let y = g.linear(x, w, b)?;
    Ok(if squash { g.tanh(y) } else { y })
}

fn encode(g: &mut Graph, params: &ParameterSet, cfg: &AgentConfig, enc: &str, img: &Image) -> Result<Var> {
    if (img.width(), img.height()) != cfg.input_size {
        return Err(Error::dims(cfg.input_size, (img.width(), img.height())));
    }
    let mut x = g.input(image_tensor(img)?);
    for (i, l) in cfg.conv.iter().enumerate() {
        let w = g.param(params, &format!("{enc}.conv{i}.w"))?;
        let b = g.param(params, &format!("{enc}.conv{i}.b"))?;
        let y = g.conv2d(x, w, b, l.stride, l.kernel / 2)?;
        x = g.tanh(y);
    }
    let n = g.value(x).len();
    let flat = g.reshape(x, &[n])?;
    dense_layer(g, params, &format!("{enc}.features"), flat, true)
}

/// Forward graph up to the squashed four outputs.
fn forward_graph(
    g: &mut Graph,
    inputs: &[Image],
    speed: f64,
    command: HighLevelCommand,
    params: &ParameterSet,
    cfg: &AgentConfig,
) -> Result<Var> {
    cfg.validate()?;
    if inputs.len() != cfg.variant.input_count() {
        return Err(Error::invalid(format!(
            "variant {} takes {} image(s), got {}",
            cfg.variant,
            cfg.variant.input_count(),
            inputs.len()
        )));
    }
    if !(speed.is_finite() && speed >= 0.0) {
        return Err(Error::invalid(format!("speed {speed} must be non-negative")));
    }
    let mut parts = Vec::new();
    for (enc, img) in cfg.encoder_names().into_iter().zip(inputs) {
        parts.push(encode(g, params, cfg, enc, img)?);
    }
    let s = g.input(Tensor::from_parts(vec![1], vec![speed / cfg.speed_scale]));
    let s = dense_layer(g, params, "agent.speed0", s, true)?;
    parts.push(dense_layer(g, params, "agent.speed1", s, true)?);
    let joined = g.concat(&parts)?;
    let f = dense_layer(g, params, "agent.fused0", joined, true)?;
    let f = dense_layer(g, params, "agent.fused1", f, true)?;
    let head = head_name(command);
    let hid = dense_layer(g, params, &format!("{head}.hidden"), f, true)?;
    let raw = dense_layer(g, params, &format!("{head}.out"), hid, false)?;
    g.squash_controls(raw, cfg.speed_scale)
}

/// Predicted controls; the returned signal carries the predicted speed in its
/// `speed` field, also returned on its own.
pub fn agent_forward(
    inputs: &[Image],
    speed: f64,
    command: HighLevelCommand,
    params: &ParameterSet,
    cfg: &AgentConfig,
) -> Result<(ControlSignal, f64)> {
    let mut g = Graph::new();
    let out = forward_graph(&mut g, inputs, speed, command, params, cfg)?;
    let v = g.value(out).data();
    let signal = ControlSignal::new(v[0], v[1], v[2], v[3])?;
    Ok((signal, v[3]))
}

/// Task-weighted squared error of one sample and its gradients.
pub fn agent_sample_gradients(
    sample: &AgentSample,
    params: &ParameterSet,
    cfg: &AgentConfig,
) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let out = forward_graph(&mut g, &sample.inputs, sample.speed, sample.command, params, cfg)?;
    let loss = g.weighted_squared_error(out, &sample.target.as_array(), &cfg.task_weights.as_array())?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("agent loss".into()));
    }
    Ok((value, g.backward(loss)?))
}

/// Mean loss and mean gradients over a batch, reduced in batch order.
pub fn agent_batch_gradients(
    batch: &[AgentSample],
    params: &ParameterSet,
    cfg: &AgentConfig,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let per_sample: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|s| agent_sample_gradients(s, params, cfg))
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

/// One SGD step; returns the pre-step multitask MSE of the batch.
pub fn agent_train_step(batch: &[AgentSample], params: &mut ParameterSet, cfg: &AgentConfig) -> Result<f64> {
    let (loss, grads) = agent_batch_gradients(batch, params, cfg)?;
    params.accumulate(&grads, 1.0)?;
    params.sgd_step(cfg.learning_rate)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{multitask_error, ErrorMode, MetricConfig};
    use crate::model::gradcheck::{grad_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(variant: AgentVariant) -> AgentConfig {
        AgentConfig {
            variant,
            input_size: (12, 12),
            conv: vec![
                ConvLayer {
                    channels: 3,
                    kernel: 3,
                    stride: 2,
                },
                ConvLayer {
                    channels: 4,
                    kernel: 3,
                    stride: 2,
                },
            ],
            feature_width: 8,
            speed_widths: [4, 4],
            fused_widths: [8, 8],
            head_width: 6,
            ..AgentConfig::default()
        }
    }

    fn image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn sample(cfg: &AgentConfig, cmd: HighLevelCommand, rng: &mut ChaCha8Rng) -> AgentSample {
        let (w, h) = cfg.input_size;
        AgentSample {
            inputs: (0..cfg.variant.input_count()).map(|_| image(rng, w, h)).collect(),
            speed: rng.random_range(0.0..8.0),
            command: cmd,
            target: ControlSignal::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..8.0),
            )
            .unwrap(),
        }
    }

    #[test]
    fn outputs_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for v in AgentVariant::ALL {
            let cfg = small(v);
            let p = init_agent_params(&cfg, 1).unwrap();
            for cmd in HighLevelCommand::ALL {
                let s = sample(&cfg, cmd, &mut rng);
                let (c, speed) = agent_forward(&s.inputs, s.speed, cmd, &p, &cfg).unwrap();
                assert!((-1.0..=1.0).contains(&c.steer));
                assert!((0.0..=1.0).contains(&c.throttle) && (0.0..=1.0).contains(&c.brake));
                assert!(speed >= 0.0 && speed == c.speed);
            }
        }
    }

    #[test]
    fn wrong_arity_is_rejected() {
        let cfg = small(AgentVariant::Dual);
        let p = init_agent_params(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = image(&mut rng, 12, 12);
        assert!(agent_forward(std::slice::from_ref(&img), 1.0, HighLevelCommand::Left, &p, &cfg).is_err());
        let raw = small(AgentVariant::Raw);
        let p = init_agent_params(&raw, 1).unwrap();
        assert!(agent_forward(&[img.clone(), img.clone()], 1.0, HighLevelCommand::Left, &p, &raw).is_err());
        assert!(agent_forward(&[image(&mut rng, 10, 12)], 1.0, HighLevelCommand::Left, &p, &raw).is_err());
        assert!(agent_forward(&[img], -1.0, HighLevelCommand::Left, &p, &raw).is_err());
    }

    #[test]
    fn only_the_selected_head_gets_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = small(AgentVariant::Raw);
        let p = init_agent_params(&cfg, 2).unwrap();
        for cmd in HighLevelCommand::ALL {
            let (_, g) = agent_sample_gradients(&sample(&cfg, cmd, &mut rng), &p, &cfg).unwrap();
            let own = head_name(cmd);
            assert!(g
                .iter()
                .filter(|(n, _)| n.starts_with("agent.head."))
                .all(|(n, _)| n.starts_with(&format!("{own}."))));
            assert!(g.get(&format!("{own}.out.w")).is_some());
        }
    }

    #[test]
    fn zero_weight_task_leaves_its_output_row_untouched() {
        let mut cfg = small(AgentVariant::Raw);
        cfg.task_weights = TaskWeights::new([1.0, 1.0, 0.0, 1.0]).unwrap();
        let p = init_agent_params(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, g) = agent_sample_gradients(&sample(&cfg, HighLevelCommand::Follow, &mut rng), &p, &cfg).unwrap();
        let w = g.get("agent.head.follow.out.w").unwrap();
        let b = g.get("agent.head.follow.out.b").unwrap();
        let hw = cfg.head_width;
        assert!(w[2 * hw..3 * hw].iter().all(|v| *v == 0.0));
        assert_eq!(b[2], 0.0);
        assert!(b[0] != 0.0);
    }

    #[test]
    fn dual_variant_reads_its_second_input() {
        let cfg = small(AgentVariant::Dual);
        let p = init_agent_params(&cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let raw = image(&mut rng, 12, 12);
        let zeros = Image::filled(12, 12, &[0.0, 0.0, 0.0]).unwrap();
        let other = image(&mut rng, 12, 12);
        let (a, _) = agent_forward(&[raw.clone(), zeros], 2.0, HighLevelCommand::Right, &p, &cfg).unwrap();
        let (b, _) = agent_forward(&[raw, other], 2.0, HighLevelCommand::Right, &p, &cfg).unwrap();
        assert!(a != b);
    }

    #[test]
    fn loss_equals_multitask_mse() {
        let cfg = small(AgentVariant::Raw);
        let p = init_agent_params(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = sample(&cfg, HighLevelCommand::Straight, &mut rng);
        let (loss, _) = agent_sample_gradients(&s, &p, &cfg).unwrap();
        let (pred, _) = agent_forward(&s.inputs, s.speed, s.command, &p, &cfg).unwrap();
        let mc = MetricConfig::new(1e-7, cfg.task_weights).unwrap();
        let direct = multitask_error(&[pred], &[s.target], &mc, ErrorMode::Mse).unwrap();
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for v in AgentVariant::ALL {
            let cfg = small(v);
            let p = init_agent_params(&cfg, 6).unwrap();
            let s = sample(&cfg, HighLevelCommand::Left, &mut rng);
            let r = grad_check(&p, |q| agent_sample_gradients(&s, q, &cfg), &GradCheckConfig::default()).unwrap();
            assert!(r.max_rel_error < 1e-4, "{v}: {r:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small(AgentVariant::Dual);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch: Vec<_> = (0..4)
            .map(|_| sample(&cfg, HighLevelCommand::Follow, &mut rng))
            .collect();
        let run = || {
            let mut p = init_agent_params(&cfg, 7).unwrap();
            for _ in 0..5 {
                agent_train_step(&batch, &mut p, &cfg).unwrap();
            }
            p
        };
        assert!(run().bitwise_eq(&run()));
    }
}
