//! Fixation maps from gaze logs, network map precomputation and map storage.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::map_io::{load_map, save_map};
use super::Dataset;
use crate::attention::{build_attention_map, window_fixations, AttentionMap, MapConfig};
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::masking::Image;
use crate::model::{clip_from_frames, gaze_forward, GazeNetConfig, HighLevelCommand, ParameterSet};

/// Fixation maps built from the gaze log.
pub const FIXATION_MAPS: &str = "maps";
/// Maps predicted by the gaze network.
pub const PREDICTED_MAPS: &str = "pred";

/// Maps indexed by episode, then frame.
pub type MapStore = Vec<Vec<AttentionMap>>;

fn integer_factor(from: (usize, usize), to: (usize, usize)) -> Result<usize> {
    let k = from.0 / to.0.max(1);
    if to.0 == 0 || to.1 == 0 || k == 0 || to.0 * k != from.0 || to.1 * k != from.1 {
        return Err(Error::invalid(format!(
            "{}x{} is not an integer multiple of {}x{}",
            from.0, from.1, to.0, to.1
        )));
    }
    Ok(k)
}

/// Box-downsamples an image to `size`, which must divide it evenly.
pub fn fit_image(img: &Image, size: (usize, usize)) -> Result<Image> {
    let k = integer_factor((img.width(), img.height()), size)?;
    img.downsample(k)
}

/// Moves a map to another resolution by summing blocks (down) or spreading
/// mass evenly over blocks (up). Integer factors only.
pub fn resample_map(map: &AttentionMap, size: (usize, usize)) -> Result<AttentionMap> {
    let (w, h) = map.dims();
    if (w, h) == size {
        return Ok(map.clone());
    }
    if map.is_empty() {
        return Ok(AttentionMap::empty(size.0, size.1));
    }
    let mut out = vec![0.0; size.0 * size.1];
    if size.0 < w {
        let k = integer_factor((w, h), size)?;
        for y in 0..h {
            for x in 0..w {
                out[(y / k) * size.0 + x / k] += map.get(x, y);
            }
        }
    } else {
        let k = integer_factor(size, (w, h))?;
        for (i, v) in out.iter_mut().enumerate() {
            *v = map.get((i % size.0) / k, (i / size.0) / k);
        }
    }
    AttentionMap::from_weights(size.0, size.1, out)
}

/// Fixation map of frame `t` at `size`: the gaze window projected into the
/// frame's camera, scaled to the requested resolution.
pub fn fixation_map(episode: &Episode, t: usize, size: (usize, usize)) -> Result<AttentionMap> {
    let intr = &episode.intrinsics;
    let k = integer_factor((intr.width() as usize, intr.height() as usize), size)?;
    let scaled = CameraIntrinsics::new(intr.focal() / k as f64, size.0 as u32, size.1 as u32)?;
    let cfg = MapConfig::for_width(size.0 as u32);
    let lo = t.saturating_sub(cfg.half_window());
    let hi = (t + cfg.half_window()).min(episode.len().saturating_sub(1));
    let records: Vec<_> = episode
        .frames
        .get(lo..=hi)
        .unwrap_or_default()
        .iter()
        .map(|f| f.gaze)
        .collect();
    let fixations = window_fixations(&records, t - lo, &cfg)?;
    Ok(build_attention_map(
        &fixations,
        &episode.frames[t].extrinsics,
        &scaled,
        &cfg,
    ))
}

pub fn episode_fixation_maps(episode: &Episode, size: (usize, usize)) -> Result<Vec<AttentionMap>> {
    (0..episode.len())
        .into_par_iter()
        .map(|t| fixation_map(episode, t, size))
        .collect()
}

/// Frames routed to each gaze branch, in `HighLevelCommand::GAZE_BRANCHES` order,
/// plus the number of frames that had no command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BranchUsage {
    pub counts: [usize; 4],
    pub missing_command: usize,
}

impl BranchUsage {
    pub fn record(&mut self, command: HighLevelCommand) {
        if command == HighLevelCommand::NoCommand {
            self.missing_command += 1;
        }
        let branch = command.gaze_branch();
        let i = HighLevelCommand::GAZE_BRANCHES
            .iter()
            .position(|c| *c == branch)
            .expect("gaze branches cover every routed command");
        self.counts[i] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Recorded command histogram, with missing commands folded into follow.
pub fn command_histogram(dataset: &Dataset) -> BranchUsage {
    let mut usage = BranchUsage::default();
    for f in dataset.episodes.iter().flat_map(|e| &e.episode.frames) {
        usage.record(f.command);
    }
    usage
}

/// Runs the gaze net on every frame, each routed by its recorded command.
pub fn predict_maps(dataset: &Dataset, params: &ParameterSet, net: &GazeNetConfig) -> Result<(MapStore, BranchUsage)> {
    net.validate()?;
    let mut usage = BranchUsage::default();
    let mut store = Vec::with_capacity(dataset.episodes.len());
    for named in &dataset.episodes {
        let ep = &named.episode;
        let images = ep
            .frames
            .par_iter()
            .map(|f| fit_image(&f.image, net.input_size))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Image> = images.iter().collect();
        let maps = (0..ep.len())
            .into_par_iter()
            .map(|t| {
                let clip = clip_from_frames(&refs, t, net.clip_length)?;
                gaze_forward(&clip, ep.frames[t].command.gaze_branch(), params, net)
            })
            .collect::<Result<Vec<_>>>()?;
        let before = usage.missing_command;
        ep.frames.iter().for_each(|f| usage.record(f.command));
        if usage.missing_command > before {
            log::info!(
                "{}: {} frames without a command routed to the follow branch",
                named.id,
                usage.missing_command - before
            );
        }
        store.push(maps);
    }
    Ok((store, usage))
}

pub fn map_path(episode_dir: &Path, kind: &str, frame: usize) -> PathBuf {
    episode_dir.join(kind).join(format!("frame_{frame:06}.amap"))
}

pub fn save_maps(episode_dir: &Path, kind: &str, maps: &[AttentionMap]) -> Result<()> {
    fs::create_dir_all(episode_dir.join(kind))?;
    maps.par_iter()
        .enumerate()
        .try_for_each(|(i, m)| save_map(&map_path(episode_dir, kind, i), m))
}

/// Loads `count` maps, failing if any is missing.
pub fn load_maps(episode_dir: &Path, kind: &str, count: usize) -> Result<Vec<AttentionMap>> {
    (0..count)
        .into_par_iter()
        .map(|i| load_map(&map_path(episode_dir, kind, i)))
        .collect()
}

/// Predicts and stores one map file per frame under each episode's `pred/` directory.
pub fn precompute_maps(
    root: &Path,
    dataset: &Dataset,
    params: &ParameterSet,
    net: &GazeNetConfig,
) -> Result<BranchUsage> {
    let (store, usage) = predict_maps(dataset, params, net)?;
    for (named, maps) in dataset.episodes.iter().zip(&store) {
        save_maps(&root.join(&named.id), PREDICTED_MAPS, maps)?;
    }
    Ok(usage)
}
