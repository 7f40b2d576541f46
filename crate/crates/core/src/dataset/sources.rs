//! Training and evaluation samples drawn from a dataset.

use rayon::prelude::*;

use super::maps::{fit_image, fixation_map, resample_map, MapStore};
use super::split::FrameRef;
use super::Dataset;
use crate::attention::AttentionMap;
use crate::episode::ActivityLabel;
use crate::error::{Error, Result};
use crate::masking::{baseline_mask, hard_mask, soft_mask, Image, MaskConfig};
use crate::metrics::ControlSignal;
use crate::model::{
    clip_from_frames, AgentSample, AgentSource, AgentVariant, GazeNetConfig, GazeSample, GazeSource, HighLevelCommand,
};

/// Gaze samples for a list of frames: clips at the net's input size and
/// fixation maps from the gaze log as truth.
pub struct GazeFrames {
    frames: Vec<FrameRef>,
    images: Vec<Vec<Image>>,
    truth: Vec<AttentionMap>,
    commands: Vec<HighLevelCommand>,
    labels: Vec<ActivityLabel>,
    clip_length: usize,
}

impl GazeFrames {
    pub fn new(dataset: &Dataset, frames: Vec<FrameRef>, net: &GazeNetConfig) -> Result<Self> {
        net.validate()?;
        let images = dataset
            .episodes
            .iter()
            .map(|e| {
                e.episode
                    .frames
                    .par_iter()
                    .map(|f| fit_image(&f.image, net.input_size))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let truth = frames
            .par_iter()
            .map(|r| fixation_map(&dataset.episodes[r.episode].episode, r.frame, net.input_size))
            .collect::<Result<Vec<_>>>()?;
        let frame = |r: &FrameRef| &dataset.episodes[r.episode].episode.frames[r.frame];
        Ok(Self {
            commands: frames.iter().map(|r| frame(r).command).collect(),
            labels: frames.iter().map(|r| frame(r).label).collect(),
            frames,
            images,
            truth,
            clip_length: net.clip_length,
        })
    }

    pub fn frames(&self) -> &[FrameRef] {
        &self.frames
    }

    pub fn truth(&self) -> &[AttentionMap] {
        &self.truth
    }
}

impl GazeSource for GazeFrames {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn sample(&self, index: usize) -> Result<GazeSample> {
        let r = self.frames.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.frames.len(),
        })?;
        let refs: Vec<&Image> = self.images[r.episode].iter().collect();
        Ok(GazeSample {
            clip: clip_from_frames(&refs, r.frame, self.clip_length)?,
            command: self.commands[index],
            truth: self.truth[index].clone(),
        })
    }

    fn label(&self, index: usize) -> ActivityLabel {
        self.labels[index]
    }

    fn command(&self, index: usize) -> HighLevelCommand {
        self.commands[index]
    }
}

/// Which attention maps feed an agent's masks.
pub struct AgentMaps<'a> {
    /// Per-frame maps for hard, soft and dual agents.
    pub frame_maps: Option<&'a MapStore>,
    /// Dataset mean map for baseline agents.
    pub mean_map: Option<&'a AttentionMap>,
    pub mask: MaskConfig,
}

/// Agent samples for a list of frames, masked according to the variant.
pub struct AgentFrames {
    variant: AgentVariant,
    raw: Vec<Image>,
    maps: Vec<Option<AttentionMap>>,
    mean_map: Option<AttentionMap>,
    mask: MaskConfig,
    commands: Vec<HighLevelCommand>,
    targets: Vec<ControlSignal>,
}

impl AgentFrames {
    pub fn new(
        dataset: &Dataset,
        frames: &[FrameRef],
        variant: AgentVariant,
        input_size: (usize, usize),
        maps: AgentMaps,
    ) -> Result<Self> {
        let needs_frame_maps = matches!(variant, AgentVariant::Hard | AgentVariant::Soft | AgentVariant::Dual);
        if needs_frame_maps && maps.frame_maps.is_none() {
            return Err(Error::invalid(format!(
                "the {variant} agent needs per-frame attention maps"
            )));
        }
        if variant == AgentVariant::Baseline && maps.mean_map.is_none() {
            return Err(Error::invalid("the baseline agent needs a mean attention map"));
        }
        let frame = |r: &FrameRef| &dataset.episodes[r.episode].episode.frames[r.frame];
        let raw = frames
            .par_iter()
            .map(|r| fit_image(&frame(r).image, input_size))
            .collect::<Result<Vec<_>>>()?;
        let frame_maps = match maps.frame_maps.filter(|_| needs_frame_maps) {
            Some(store) => frames
                .par_iter()
                .map(|r| {
                    let m = store
                        .get(r.episode)
                        .and_then(|e| e.get(r.frame))
                        .ok_or_else(|| Error::invalid("map store does not cover the dataset"))?;
                    resample_map(m, input_size).map(Some)
                })
                .collect::<Result<Vec<_>>>()?,
            None => vec![None; frames.len()],
        };
        let mean_map = match maps.mean_map {
            Some(g) if variant == AgentVariant::Baseline => Some(resample_map(g, input_size)?),
            _ => None,
        };
        Ok(Self {
            variant,
            raw,
            maps: frame_maps,
            mean_map,
            mask: maps.mask,
            commands: frames.iter().map(|r| frame(r).command).collect(),
            targets: frames.iter().map(|r| frame(r).control).collect(),
        })
    }
}

impl AgentSource for AgentFrames {
    fn len(&self) -> usize {
        self.raw.len()
    }

    fn sample(&self, index: usize) -> Result<AgentSample> {
        let raw = self.raw.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.raw.len(),
        })?;
        let map = || self.maps[index].as_ref().expect("checked at construction");
        let inputs = match self.variant {
            AgentVariant::Raw => vec![raw.clone()],
            AgentVariant::Hard => vec![hard_mask(raw, map())?],
            AgentVariant::Soft => vec![soft_mask(raw, map(), &self.mask)?],
            AgentVariant::Baseline => vec![baseline_mask(
                raw,
                self.mean_map.as_ref().expect("checked at construction"),
            )?],
            AgentVariant::Dual => vec![raw.clone(), hard_mask(raw, map())?],
        };
        let target = self.targets[index];
        Ok(AgentSample {
            inputs,
            speed: target.speed,
            command: self.commands[index],
            target,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NamedEpisode;
    use crate::synth::{gen_episode, gen_scene, EpisodeConfig, SceneConfig};

    fn dataset() -> Dataset {
        let scene = gen_scene(1, &SceneConfig::default()).unwrap();
        let cfg = EpisodeConfig {
            frames: 20,
            image_size: (32, 32),
            ..EpisodeConfig::default()
        };
        Dataset {
            episodes: vec![NamedEpisode {
                id: "ep_0000".into(),
                episode: gen_episode(&scene, 1, &cfg).unwrap(),
            }],
        }
    }

    fn all_frames(n: usize) -> Vec<FrameRef> {
        (0..n).map(|frame| FrameRef { episode: 0, frame }).collect()
    }

    #[test]
    fn gaze_samples_match_the_net_shape() {
        let ds = dataset();
        let net = GazeNetConfig {
            input_size: (16, 16),
            coarse_size: (8, 8),
            ..GazeNetConfig::default()
        };
        let src = GazeFrames::new(&ds, all_frames(20), &net).unwrap();
        let s = src.sample(7).unwrap();
        assert_eq!(s.clip.shape(), &[4, 3, 16, 16]);
        assert_eq!(s.truth.dims(), (16, 16));
        assert_eq!(s.command, ds.episodes[0].episode.frames[7].command);
    }

    #[test]
    fn agent_inputs_follow_the_variant() {
        let ds = dataset();
        let store: MapStore = vec![vec![AttentionMap::uniform(32, 32); 20]];
        let mean = AttentionMap::uniform(8, 8);
        let maps = || AgentMaps {
            frame_maps: Some(&store),
            mean_map: Some(&mean),
            mask: MaskConfig::default(),
        };
        for variant in AgentVariant::ALL {
            let src = AgentFrames::new(&ds, &all_frames(20), variant, (16, 16), maps()).unwrap();
            let s = src.sample(3).unwrap();
            assert_eq!(s.inputs.len(), variant.input_count());
            assert_eq!((s.inputs[0].width(), s.inputs[0].height()), (16, 16));
            assert_eq!(s.target, ds.episodes[0].episode.frames[3].control);
        }
        let none = AgentMaps {
            frame_maps: None,
            mean_map: None,
            mask: MaskConfig::default(),
        };
        assert!(AgentFrames::new(&ds, &all_frames(20), AgentVariant::Hard, (16, 16), none).is_err());
    }
}
