use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use drivegaze::attention::{mean_fixation_map, AttentionMap};
use drivegaze::dataset::{
    episode_fixation_maps, episode_id, filter_episodes, fixation_map, load_dataset, load_maps, precompute_maps,
    resample_map, save_dataset, save_image, save_maps, AgentFrames, AgentMaps, Dataset, DatasetSplit, FrameRef,
    GazeFrames, LabelFilter, MapStore, NamedEpisode, SplitPart, FIXATION_MAPS, PREDICTED_MAPS,
};
use drivegaze::masking::{apply_mask, MaskConfig, MaskMode};
use drivegaze::metrics::{MetricConfig, TaskWeights};
use drivegaze::model::agent::agent_param_specs;
use drivegaze::model::gaze::gaze_param_specs;
use drivegaze::model::{
    evaluate_agent, evaluate_gaze, evaluate_gaze_with, init_agent_params, init_gaze_params, load_checkpoint,
    save_checkpoint, train_agent, train_gaze, AgentConfig, AgentScores, AgentVariant, EvalSeries, GazeEvaluation,
    GazeNetConfig, GazeSchedule, ParameterSet, SplitScores, TrainConfig,
};
use drivegaze::synth::{gen_episode, gen_scene, EpisodeConfig, GazePolicy, SceneConfig};
use log::{info, warn};
use rayon::prelude::*;

use crate::args::*;

const SPLIT_FILE: &str = "split.txt";

fn dry_run_done(what: &str) -> Result<()> {
    println!("dry run: {what} configuration is valid");
    Ok(())
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        bail!("{} is not a directory", path.display());
    }
    Ok(())
}

fn load(root: &Path) -> Result<Dataset> {
    load_dataset(root).with_context(|| format!("loading dataset {}", root.display()))
}

/// The dataset's split file, or every episode on both sides when there is none.
fn split_for(root: &Path, dataset: &Dataset, filter: LabelFilter) -> Result<DatasetSplit> {
    let path = root.join(SPLIT_FILE);
    if path.is_file() {
        let mut split = DatasetSplit::load(&path)?;
        split.filter = filter;
        return Ok(split);
    }
    warn!(
        "{} has no {SPLIT_FILE}; training and scoring on every episode",
        root.display()
    );
    Ok(DatasetSplit::new(dataset.ids(), vec![], filter)?)
}

/// Frames of one side of the split; an empty test side falls back to the training episodes.
fn frames(dataset: &Dataset, split: &DatasetSplit, part: SplitPart) -> Result<Vec<FrameRef>> {
    let ids = match part {
        SplitPart::Test if split.test().is_empty() => {
            warn!("no held-out episodes; scoring on the training episodes");
            split.train()
        }
        _ => split.part(part),
    };
    let refs = filter_episodes(dataset, ids, split.filter)?;
    if refs.is_empty() {
        bail!("the selected split has no frames");
    }
    Ok(refs)
}

fn gaze_config(a: &GazeNetArgs) -> Result<GazeNetConfig> {
    let cfg = GazeNetConfig {
        clip_length: a.clip_length,
        input_size: (a.net_size.0, a.net_size.1),
        coarse_size: (a.coarse_size.0, a.coarse_size.1),
        coarse_widths: a.coarse_widths.clone(),
        refine_width: a.refine_width,
        difference_stream: a.difference_stream,
        crop_stream: !a.no_crop_stream,
        schedule: match a.stream_steps {
            Some(stream_steps) => GazeSchedule::TwoPhase { stream_steps },
            None => GazeSchedule::SinglePhase,
        },
        learning_rate: a.gaze_lr,
        ..GazeNetConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn task_weights(a: &AgentArgs) -> Result<TaskWeights> {
    let w: [f64; 4] = a
        .task_weights
        .as_slice()
        .try_into()
        .map_err(|_| anyhow::anyhow!("--task-weights needs four values, got {}", a.task_weights.len()))?;
    Ok(TaskWeights::new(w)?)
}

fn agent_config(a: &AgentArgs, variant: AgentVariant) -> Result<AgentConfig> {
    let cfg = AgentConfig {
        variant,
        input_size: (a.agent_size.0, a.agent_size.1),
        task_weights: task_weights(a)?,
        learning_rate: a.agent_lr,
        ..AgentConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn metric_config(epsilon: f64, weights: TaskWeights) -> Result<MetricConfig> {
    Ok(MetricConfig::new(epsilon, weights)?)
}

fn load_gaze_params(path: &Path, cfg: &GazeNetConfig) -> Result<ParameterSet> {
    let params = load_checkpoint(path)?;
    params
        .conforms_to(&gaze_param_specs(cfg)?)
        .with_context(|| format!("{} does not match the gaze net flags", path.display()))?;
    Ok(params)
}

fn load_agent_params(path: &Path, cfg: &AgentConfig) -> Result<ParameterSet> {
    let params = load_checkpoint(path)?;
    params
        .conforms_to(&agent_param_specs(cfg)?)
        .with_context(|| format!("{} does not match the {} agent flags", path.display(), cfg.variant))?;
    Ok(params)
}

/// Mean fixation map over the given frames at `size`.
fn mean_map(dataset: &Dataset, frames: &[FrameRef], size: (usize, usize)) -> Result<AttentionMap> {
    let maps = frames
        .par_iter()
        .map(|r| fixation_map(&dataset.episodes[r.episode].episode, r.frame, size))
        .collect::<drivegaze::Result<Vec<_>>>()?;
    Ok(mean_fixation_map(maps.iter().filter(|m| !m.is_empty()))?)
}

fn frame_maps(root: &Path, dataset: &Dataset, source: MapSource) -> Result<MapStore> {
    dataset
        .episodes
        .iter()
        .map(|e| match source {
            MapSource::Pred => load_maps(&root.join(&e.id), PREDICTED_MAPS, e.episode.len())
                .with_context(|| format!("reading predicted maps of {} (run `precompute` first)", e.id)),
            MapSource::Fixation => {
                let intr = &e.episode.intrinsics;
                Ok(episode_fixation_maps(
                    &e.episode,
                    (intr.width() as usize, intr.height() as usize),
                )?)
            }
        })
        .collect()
}

fn needs_frame_maps(variant: AgentVariant) -> bool {
    matches!(variant, AgentVariant::Hard | AgentVariant::Soft | AgentVariant::Dual)
}

pub fn gen(a: &GenArgs, dry_run: bool) -> Result<()> {
    let scene_cfg = SceneConfig {
        segments: a.segments,
        ..SceneConfig::default()
    };
    let episode_cfg = EpisodeConfig {
        frames: a.frames,
        image_size: (a.size.0 as u32, a.size.1 as u32),
        traffic_fraction: a.traffic_fraction,
        action_noise: a.action_noise,
        gaze: GazePolicy {
            side_bias: a.side_bias,
            ..GazePolicy::default()
        },
        ..EpisodeConfig::default()
    };
    scene_cfg.validate()?;
    episode_cfg.validate()?;
    if a.episodes == 0 || a.test_episodes > a.episodes {
        bail!("need at least one episode and no more test episodes than episodes");
    }
    if dry_run {
        return dry_run_done("gen");
    }
    let episodes = (0..a.episodes)
        .map(|k| {
            let seed = a.seed.wrapping_mul(1000).wrapping_add(k as u64);
            let scene = gen_scene(seed, &scene_cfg)?;
            let episode = gen_episode(&scene, seed, &episode_cfg)?;
            info!(
                "{}: {} frames, traffic fraction {:.3}",
                episode_id(k),
                episode.len(),
                episode.traffic_fraction()
            );
            Ok(NamedEpisode {
                id: episode_id(k),
                episode,
            })
        })
        .collect::<drivegaze::Result<Vec<_>>>()?;
    let dataset = Dataset { episodes };
    save_dataset(&a.out, &dataset)?;
    DatasetSplit::holdout(&dataset.ids(), a.test_episodes, LabelFilter::All)?.save(&a.out.join(SPLIT_FILE))?;
    println!(
        "wrote {} episodes ({} frames) to {}",
        a.episodes,
        dataset.frame_count(),
        a.out.display()
    );
    Ok(())
}

pub fn maps(a: &MapsArgs, dry_run: bool) -> Result<()> {
    require_dir(&a.input)?;
    if dry_run {
        return dry_run_done("maps");
    }
    let dataset = load(&a.input)?;
    let (mut written, mut empty) = (0, 0);
    for e in &dataset.episodes {
        let intr = &e.episode.intrinsics;
        let size = a
            .size
            .map_or((intr.width() as usize, intr.height() as usize), |s| (s.0, s.1));
        let maps = episode_fixation_maps(&e.episode, size)?;
        empty += maps.iter().filter(|m| m.is_empty()).count();
        written += maps.len();
        save_maps(&a.input.join(&e.id), FIXATION_MAPS, &maps)?;
    }
    println!("wrote {written} fixation maps ({empty} without an in-view fixation)");
    Ok(())
}

pub fn precompute(a: &PrecomputeArgs, dry_run: bool) -> Result<()> {
    let net = gaze_config(&a.net)?;
    require_dir(&a.input)?;
    let params = load_gaze_params(&a.checkpoint, &net)?;
    if dry_run {
        return dry_run_done("precompute");
    }
    let dataset = load(&a.input)?;
    let usage = precompute_maps(&a.input, &dataset, &params, &net)?;
    println!("wrote {} predicted maps", usage.total());
    for (cmd, n) in drivegaze::model::HighLevelCommand::GAZE_BRANCHES
        .iter()
        .zip(usage.counts)
    {
        println!("  {cmd:<9} {n}");
    }
    if usage.missing_command > 0 {
        println!(
            "  ({} frames without a command used the follow branch)",
            usage.missing_command
        );
    }
    Ok(())
}

pub fn mask(a: &MaskArgs, dry_run: bool) -> Result<()> {
    let cfg = MaskConfig::new(a.lambda)?;
    require_dir(&a.input)?;
    if dry_run {
        return dry_run_done("mask");
    }
    let dataset = load(&a.input)?;
    let split = split_for(&a.input, &dataset, LabelFilter::All)?;
    let mut written = 0;
    for (ei, e) in dataset.episodes.iter().enumerate() {
        let intr = &e.episode.intrinsics;
        let size = (intr.width() as usize, intr.height() as usize);
        let maps: Vec<AttentionMap> = match a.mode {
            MaskMode::Baseline => {
                let train = frames(&dataset, &split, SplitPart::Train)?;
                vec![mean_map(&dataset, &train, size)?; e.episode.len()]
            }
            _ => frame_maps(&a.input, &dataset, a.source)?.swap_remove(ei),
        };
        let out = a.input.join(&e.id).join("masked").join(a.mode.as_str());
        fs::create_dir_all(&out)?;
        e.episode
            .frames
            .par_iter()
            .zip(maps.par_iter())
            .enumerate()
            .try_for_each(|(i, (f, m))| -> drivegaze::Result<()> {
                let m = resample_map(m, size)?;
                save_image(
                    &out.join(format!("frame_{i:06}.ppm")),
                    &apply_mask(&f.image, &m, a.mode, &cfg)?,
                )
            })?;
        written += e.episode.len();
    }
    println!("wrote {written} {} masked images", a.mode.as_str());
    Ok(())
}

pub fn train_gaze_cmd(a: &TrainGazeArgs, dry_run: bool) -> Result<()> {
    let net = gaze_config(&a.net)?;
    let tcfg = train_config(&a.train)?;
    require_dir(&a.input)?;
    if dry_run {
        return dry_run_done("train-gaze");
    }
    let dataset = load(&a.input)?;
    let split = split_for(&a.input, &dataset, a.filter)?;
    let source = GazeFrames::new(&dataset, frames(&dataset, &split, SplitPart::Train)?, &net)?;
    let mut params = init_gaze_params(&net, tcfg.seed)?;
    let log = train_gaze(&source, &mut params, &net, &tcfg, |step, _| {
        if step % 100 == 0 {
            info!("step {step}");
        }
        Ok(())
    })?;
    save_checkpoint(&a.out, &params)?;
    if let Some(path) = &a.loss_log {
        log.save(path)?;
    }
    let last = log.entries.last().map_or(f64::NAN, |e| e.1);
    println!(
        "trained gaze net for {} steps on {} frames; final batch loss {last:.4}",
        tcfg.steps,
        source.frames().len()
    );
    Ok(())
}

fn agent_frames(
    root: &Path,
    dataset: &Dataset,
    refs: &[FrameRef],
    train_refs: &[FrameRef],
    cfg: &AgentConfig,
    source: MapSource,
    mask: MaskConfig,
) -> Result<AgentFrames> {
    let store = if needs_frame_maps(cfg.variant) {
        Some(frame_maps(root, dataset, source)?)
    } else {
        None
    };
    let mean = if cfg.variant == AgentVariant::Baseline {
        Some(mean_map(dataset, train_refs, cfg.input_size)?)
    } else {
        None
    };
    Ok(AgentFrames::new(
        dataset,
        refs,
        cfg.variant,
        cfg.input_size,
        AgentMaps {
            frame_maps: store.as_ref(),
            mean_map: mean.as_ref(),
            mask,
        },
    )?)
}

pub fn train_agent_cmd(a: &TrainAgentArgs, dry_run: bool) -> Result<()> {
    let cfg = agent_config(&a.agent, a.variant)?;
    let tcfg = train_config(&a.train)?;
    let mask = MaskConfig::new(a.lambda)?;
    require_dir(&a.input)?;
    if dry_run {
        return dry_run_done("train-agent");
    }
    let dataset = load(&a.input)?;
    let split = split_for(&a.input, &dataset, LabelFilter::All)?;
    let train = frames(&dataset, &split, SplitPart::Train)?;
    let source = agent_frames(&a.input, &dataset, &train, &train, &cfg, a.source, mask)?;
    let mut params = init_agent_params(&cfg, tcfg.seed)?;
    let log = train_agent(&source, &mut params, &cfg, &tcfg, |_, _| Ok(()))?;
    save_checkpoint(&a.out, &params)?;
    if let Some(path) = &a.loss_log {
        log.save(path)?;
    }
    let last = log.entries.last().map_or(f64::NAN, |e| e.1);
    println!(
        "trained {} agent for {} steps on {} frames; final batch MSE {last:.5}",
        a.variant,
        tcfg.steps,
        train.len()
    );
    Ok(())
}

fn fmt_cc(s: &SplitScores) -> String {
    s.cc.map_or("n/a".to_string(), |c| format!("{c:.4}"))
}

fn gaze_table(rows: &[(&str, GazeEvaluation)]) -> (String, String) {
    let mut text = String::new();
    let mut tsv = String::from("model\tsplit\tframes\tkl\tcc\n");
    writeln!(text, "{:<14}{:>28}   {:>28}", "", "overall", "driving only").ok();
    writeln!(
        text,
        "{:<14}{:>8}{:>10}{:>10}   {:>8}{:>10}{:>10}",
        "model", "frames", "D_KL", "CC", "frames", "D_KL", "CC"
    )
    .ok();
    for (name, e) in rows {
        writeln!(
            text,
            "{:<14}{:>8}{:>10.4}{:>10}   {:>8}{:>10.4}{:>10}",
            name,
            e.overall.frames,
            e.overall.kl,
            fmt_cc(&e.overall),
            e.driving.frames,
            e.driving.kl,
            fmt_cc(&e.driving)
        )
        .ok();
        for (split, s) in [("overall", &e.overall), ("driving", &e.driving)] {
            let cc = s.cc.map_or(String::from("nan"), |c| format!("{c:?}"));
            writeln!(tsv, "{name}\t{split}\t{}\t{:?}\t{cc}", s.frames, s.kl).ok();
        }
    }
    if let Some((_, e)) = rows.first() {
        writeln!(text, "frames without an in-view fixation (not scored): {}", e.skipped).ok();
    }
    (text, tsv)
}

pub fn eval_gaze_cmd(a: &EvalGazeArgs, dry_run: bool) -> Result<()> {
    let net = gaze_config(&a.net)?;
    let metric = metric_config(a.epsilon, TaskWeights::default())?;
    require_dir(&a.input)?;
    let params = load_gaze_params(&a.checkpoint, &net)?;
    if dry_run {
        return dry_run_done("eval-gaze");
    }
    let dataset = load(&a.input)?;
    let split = split_for(&a.input, &dataset, LabelFilter::All)?;
    let train = frames(&dataset, &split, SplitPart::Train)?;
    let test = GazeFrames::new(&dataset, frames(&dataset, &split, SplitPart::Test)?, &net)?;
    let prior = mean_map(&dataset, &train, net.input_size)?;
    let learned = evaluate_gaze(&params, &test, &net, &metric)?;
    let baseline = evaluate_gaze_with(&test, |_| Ok(prior.clone()), &metric)?;
    let (text, tsv) = gaze_table(&[("gaze-net", learned), ("center-prior", baseline)]);
    print!("{text}");
    if let Some(path) = &a.tsv {
        fs::write(path, tsv)?;
    }
    Ok(())
}

fn agent_table(rows: &[(AgentVariant, AgentScores)]) -> (String, String) {
    let mut text = format!("{:<10}{:>8}{:>12}{:>12}\n", "agent", "frames", "MSE", "MAE");
    let mut tsv = String::from("variant\tframes\tmse\tmae\n");
    for (v, s) in rows {
        writeln!(text, "{:<10}{:>8}{:>12.5}{:>12.5}", v.as_str(), s.frames, s.mse, s.mae).ok();
        writeln!(tsv, "{v}\t{}\t{:?}\t{:?}", s.frames, s.mse, s.mae).ok();
    }
    (text, tsv)
}

pub fn eval_agent_cmd(a: &EvalAgentArgs, dry_run: bool) -> Result<()> {
    let mask = MaskConfig::new(a.lambda)?;
    require_dir(&a.input)?;
    let mut models = Vec::with_capacity(a.models.len());
    for (variant, path) in &a.models {
        let cfg = agent_config(&a.agent, *variant)?;
        let params = load_agent_params(path, &cfg)?;
        models.push((cfg, params));
    }
    let metric = metric_config(MetricConfig::DEFAULT_EPSILON, task_weights(&a.agent)?)?;
    if dry_run {
        return dry_run_done("eval-agent");
    }
    let dataset = load(&a.input)?;
    let split = split_for(&a.input, &dataset, LabelFilter::All)?;
    let train = frames(&dataset, &split, SplitPart::Train)?;
    let test = frames(&dataset, &split, SplitPart::Test)?;
    let mut rows = Vec::with_capacity(models.len());
    for (cfg, params) in &models {
        let source = agent_frames(&a.input, &dataset, &test, &train, cfg, a.source, mask)?;
        rows.push((cfg.variant, evaluate_agent(params, &source, cfg, &metric)?));
    }
    let (text, tsv) = agent_table(&rows);
    print!("{text}");
    if let Some(path) = &a.tsv {
        fs::write(path, tsv)?;
    }
    Ok(())
}

pub fn eval_series_cmd(a: &EvalSeriesArgs, dry_run: bool) -> Result<()> {
    let cfg = agent_config(&a.agent, a.variant)?;
    let tcfg = train_config(&a.train)?;
    let mask = MaskConfig::new(a.lambda)?;
    let metric = metric_config(MetricConfig::DEFAULT_EPSILON, task_weights(&a.agent)?)?;
    if a.every == 0 {
        bail!("--every must be positive");
    }
    require_dir(&a.input)?;
    if dry_run {
        return dry_run_done("eval-series");
    }
    let dataset = load(&a.input)?;
    let split = split_for(&a.input, &dataset, LabelFilter::All)?;
    let train = frames(&dataset, &split, SplitPart::Train)?;
    let test = frames(&dataset, &split, SplitPart::Test)?;
    let train_src = agent_frames(&a.input, &dataset, &train, &train, &cfg, a.source, mask)?;
    let test_src = agent_frames(&a.input, &dataset, &test, &train, &cfg, a.source, mask)?;
    let mut params = init_agent_params(&cfg, tcfg.seed)?;
    let mut series = EvalSeries::default();
    series.push(0, evaluate_agent(&params, &test_src, &cfg, &metric)?)?;
    train_agent(&train_src, &mut params, &cfg, &tcfg, |step, p| {
        if step % a.every == 0 || step == tcfg.steps {
            series.push(step, evaluate_agent(p, &test_src, &cfg, &metric)?)?;
        }
        Ok(())
    })?;
    fs::write(&a.out, series.to_tsv())?;
    println!("wrote {} points to {}", series.points.len(), a.out.display());
    Ok(())
}
