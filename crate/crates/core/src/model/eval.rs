//! Offline evaluation of gaze predictors (overall and driving-only columns)
//! and of driving agents (task-weighted MSE and MAE).

use std::fmt::Write as _;

use rayon::prelude::*;

use super::agent::{agent_forward, AgentConfig, AgentSample};
use super::gaze::{gaze_forward, GazeNetConfig, GazeSample};
use super::params::ParameterSet;
use super::HighLevelCommand;
use crate::attention::AttentionMap;
use crate::episode::ActivityLabel;
use crate::error::{Error, Result};
use crate::metrics::{correlation_coefficient, kl_divergence, multitask_error, ControlSignal, ErrorMode, MetricConfig};

/// Random access to labelled gaze samples, built on demand.
pub trait GazeSource: Sync {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> Result<GazeSample>;
    fn label(&self, index: usize) -> ActivityLabel;
    /// Branch command of a sample, read without building its clip.
    fn command(&self, index: usize) -> HighLevelCommand;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Random access to agent samples, built on demand.
pub trait AgentSource: Sync {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> Result<AgentSample>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl GazeSource for [(GazeSample, ActivityLabel)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn sample(&self, index: usize) -> Result<GazeSample> {
        Ok(self[index].0.clone())
    }

    fn label(&self, index: usize) -> ActivityLabel {
        self[index].1
    }

    fn command(&self, index: usize) -> HighLevelCommand {
        self[index].0.command
    }
}

impl AgentSource for [AgentSample] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn sample(&self, index: usize) -> Result<AgentSample> {
        Ok(self[index].clone())
    }
}

/// Per-frame means over one subset of frames. Frames whose truth map is empty
/// are not scored; frames where CC is undefined are left out of the CC mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitScores {
    pub frames: usize,
    pub kl: f64,
    pub cc: Option<f64>,
    pub cc_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeEvaluation {
    pub overall: SplitScores,
    pub driving: SplitScores,
    /// Frames without a fixation in view.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy)]
struct FrameScore {
    kl: f64,
    cc: Option<f64>,
    label: ActivityLabel,
}

fn summarize<'a>(scores: impl Iterator<Item = &'a FrameScore>) -> SplitScores {
    let (mut frames, mut kl, mut cc, mut cc_frames) = (0, 0.0, 0.0, 0);
    for s in scores {
        frames += 1;
        kl += s.kl;
        if let Some(c) = s.cc {
            cc += c;
            cc_frames += 1;
        }
    }
    SplitScores {
        frames,
        kl: if frames > 0 { kl / frames as f64 } else { f64::NAN },
        cc: (cc_frames > 0).then(|| cc / cc_frames as f64),
        cc_frames,
    }
}

/// Scores any map predictor on a labelled source.
pub fn evaluate_gaze_with<S, F>(source: &S, predictor: F, cfg: &MetricConfig) -> Result<GazeEvaluation>
where
    S: GazeSource + ?Sized,
    F: Fn(&GazeSample) -> Result<AttentionMap> + Sync,
{
    if source.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let per_frame: Vec<Option<FrameScore>> = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let sample = source.sample(i)?;
            if sample.truth.is_empty() {
                return Ok(None);
            }
            let pred = predictor(&sample)?;
            let kl = kl_divergence(&sample.truth, &pred, cfg)?;
            let cc = match correlation_coefficient(&sample.truth, &pred) {
                Ok(c) => Some(c),
                Err(Error::Undefined(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(Some(FrameScore {
                kl,
                cc,
                label: source.label(i),
            }))
        })
        .collect::<Result<_>>()?;
    let scored: Vec<FrameScore> = per_frame.iter().flatten().copied().collect();
    Ok(GazeEvaluation {
        overall: summarize(scored.iter()),
        driving: summarize(scored.iter().filter(|s| s.label == ActivityLabel::Driving)),
        skipped: per_frame.len() - scored.len(),
    })
}

/// Scores the gaze net, each frame routed to its recorded command's branch.
pub fn evaluate_gaze<S: GazeSource + ?Sized>(
    params: &ParameterSet,
    source: &S,
    net: &GazeNetConfig,
    cfg: &MetricConfig,
) -> Result<GazeEvaluation> {
    evaluate_gaze_with(
        source,
        |s| gaze_forward(&s.clip, s.command.gaze_branch(), params, net),
        cfg,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentScores {
    pub mse: f64,
    pub mae: f64,
    pub frames: usize,
}

/// Scores any control predictor on a source.
pub fn evaluate_agent_with<S, F>(source: &S, predictor: F, cfg: &MetricConfig) -> Result<AgentScores>
where
    S: AgentSource + ?Sized,
    F: Fn(&AgentSample) -> Result<ControlSignal> + Sync,
{
    if source.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let pairs: Vec<(ControlSignal, ControlSignal)> = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let s = source.sample(i)?;
            Ok((predictor(&s)?, s.target))
        })
        .collect::<Result<_>>()?;
    let (preds, targets): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(AgentScores {
        mse: multitask_error(&preds, &targets, cfg, ErrorMode::Mse)?,
        mae: multitask_error(&preds, &targets, cfg, ErrorMode::Mae)?,
        frames: preds.len(),
    })
}

pub fn evaluate_agent<S: AgentSource + ?Sized>(
    params: &ParameterSet,
    source: &S,
    agent: &AgentConfig,
    cfg: &MetricConfig,
) -> Result<AgentScores> {
    evaluate_agent_with(
        source,
        |s| agent_forward(&s.inputs, s.speed, s.command, params, agent).map(|(c, _)| c),
        cfg,
    )
}

/// Metric values recorded at increasing training steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSeries {
    pub points: Vec<(usize, AgentScores)>,
}

impl EvalSeries {
    pub fn push(&mut self, step: usize, scores: AgentScores) -> Result<()> {
        if let Some((last, _)) = self.points.last() {
            if step <= *last {
                return Err(Error::invalid(format!("series step {step} does not follow {last}")));
            }
        }
        self.points.push((step, scores));
        Ok(())
    }

    /// Tab-separated table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("step\tmse\tmae\n");
        for (step, sc) in &self.points {
            writeln!(s, "{step}\t{:e}\t{:e}", sc.mse, sc.mae).expect("writing to a String");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::fuse_fixations;
    use crate::geometry::PixelPoint;
    use crate::masking::Image;
    use crate::model::tensor::Tensor;
    use crate::model::HighLevelCommand;

    fn frame(x: f64, y: f64, label: ActivityLabel) -> (GazeSample, ActivityLabel) {
        let truth = AttentionMap::from_weights(6, 5, fuse_fixations(&[PixelPoint { x, y }], 6, 5, 1.0)).unwrap();
        let sample = GazeSample {
            clip: Tensor::zeros(&[1, 3, 5, 6]),
            command: HighLevelCommand::Follow,
            truth,
        };
        (sample, label)
    }

    fn frames() -> Vec<(GazeSample, ActivityLabel)> {
        vec![
            frame(1.0, 1.0, ActivityLabel::Driving),
            frame(4.0, 3.0, ActivityLabel::Traffic),
            frame(2.0, 4.0, ActivityLabel::Driving),
        ]
    }

    #[test]
    fn perfect_predictor() {
        let data = frames();
        let e = evaluate_gaze_with(data.as_slice(), |s| Ok(s.truth.clone()), &MetricConfig::default()).unwrap();
        assert!(e.overall.kl < 1e-4);
        assert!(e.overall.cc.unwrap() > 0.999);
        assert_eq!((e.overall.frames, e.driving.frames), (3, 2));
    }

    #[test]
    fn uniform_predictor_matches_direct_sum() {
        let data = frames();
        let cfg = MetricConfig::default();
        let e = evaluate_gaze_with(data.as_slice(), |_| Ok(AttentionMap::uniform(6, 5)), &cfg).unwrap();
        let eps = cfg.epsilon();
        let direct: Vec<f64> = data
            .iter()
            .map(|(s, _)| {
                s.truth
                    .values()
                    .iter()
                    .map(|y| y * (eps + y / (eps + 1.0 / 30.0)).ln())
                    .sum::<f64>()
            })
            .collect();
        assert!((e.overall.kl - direct.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert!((e.driving.kl - (direct[0] + direct[2]) / 2.0).abs() < 1e-12);
        assert_eq!(e.overall.cc, None);
    }

    #[test]
    fn empty_truth_frames_are_skipped() {
        let mut data = frames();
        data[1].0.truth = AttentionMap::empty(6, 5);
        let e = evaluate_gaze_with(
            data.as_slice(),
            |_| Ok(AttentionMap::uniform(6, 5)),
            &MetricConfig::default(),
        )
        .unwrap();
        assert_eq!((e.overall.frames, e.skipped), (2, 1));
    }

    fn agent_samples() -> Vec<AgentSample> {
        let img = Image::filled(2, 2, &[0.5, 0.5, 0.5]).unwrap();
        [(0.1, 0.5, 0.0, 3.0), (-0.4, 0.0, 1.0, 0.0), (0.0, 0.2, 0.1, 5.5)]
            .into_iter()
            .map(|(s, t, b, v)| AgentSample {
                inputs: vec![img.clone()],
                speed: v,
                command: HighLevelCommand::Follow,
                target: ControlSignal::new(s, t, b, v).unwrap(),
            })
            .collect()
    }

    #[test]
    fn expert_replay_scores_zero() {
        let data = agent_samples();
        let s = evaluate_agent_with(data.as_slice(), |s| Ok(s.target), &MetricConfig::default()).unwrap();
        assert_eq!((s.mse, s.mae, s.frames), (0.0, 0.0, 3));
    }

    #[test]
    fn constant_predictor_matches_loop() {
        let data = agent_samples();
        let cfg = MetricConfig::default();
        let c = ControlSignal::new(0.05, 0.3, 0.2, 2.0).unwrap();
        let s = evaluate_agent_with(data.as_slice(), |_| Ok(c), &cfg).unwrap();
        let w = [0.5, 0.2, 0.2, 0.1];
        let (mut mse, mut mae) = (0.0, 0.0);
        for (k, wk) in w.iter().enumerate() {
            let (mut sq, mut ab) = (0.0, 0.0);
            for d in &data {
                let e = c.as_array()[k] - d.target.as_array()[k];
                sq += e * e;
                ab += e.abs();
            }
            mse += wk * sq / 3.0;
            mae += wk * ab / 3.0;
        }
        assert!((s.mse - mse).abs() < 1e-12 && (s.mae - mae).abs() < 1e-12);
    }

    #[test]
    fn series_steps_increase() {
        let mut series = EvalSeries::default();
        let sc = AgentScores {
            mse: 1.0,
            mae: 0.5,
            frames: 3,
        };
        series.push(0, sc).unwrap();
        series.push(10, sc).unwrap();
        assert!(series.push(10, sc).is_err());
        assert_eq!(series.to_tsv().lines().count(), 3);
    }
}
