//! On-disk formats and dataset utilities.
//!
//! A dataset is a directory of episode directories (`ep_0000/`, …), each
//! optionally holding `maps/` (fixation maps) and `pred/` (network maps).

mod episode_io;
mod image_io;
mod map_io;
mod maps;
mod sources;
mod split;
mod text;

use std::fs;
use std::path::Path;

pub use episode_io::{
    format_gaze_line, image_name, load_episode, parse_gaze_line, save_episode, EPISODE_FORMAT, EPISODE_VERSION,
};
pub use image_io::{decode_image, encode_image, load_image, save_image};
pub use map_io::{decode_map, encode_map, load_map, save_map, MAP_MAGIC};
pub use maps::{
    command_histogram, episode_fixation_maps, fit_image, fixation_map, load_maps, map_path, precompute_maps,
    predict_maps, resample_map, save_maps, BranchUsage, MapStore, FIXATION_MAPS, PREDICTED_MAPS,
};
pub use sources::{AgentFrames, AgentMaps, GazeFrames};
pub use split::{filter_episodes, filter_split, DatasetSplit, FrameRef, LabelFilter, SplitPart};

use crate::episode::Episode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedEpisode {
    pub id: String,
    pub episode: Episode,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub episodes: Vec<NamedEpisode>,
}

impl Dataset {
    pub fn ids(&self) -> Vec<String> {
        self.episodes.iter().map(|e| e.id.clone()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.episodes.iter().position(|e| e.id == id)
    }

    pub fn frame_count(&self) -> usize {
        self.episodes.iter().map(|e| e.episode.len()).sum()
    }
}

pub fn episode_id(index: usize) -> String {
    format!("ep_{index:04}")
}

pub fn save_dataset(root: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(root)?;
    for e in &dataset.episodes {
        save_episode(&root.join(&e.id), &e.episode)?;
    }
    Ok(())
}

/// Loads every subdirectory holding a manifest, in name order.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.path().join("manifest.txt").is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    if ids.is_empty() {
        return Err(Error::invalid(format!("no episodes found in {}", root.display())));
    }
    ids.sort();
    let episodes = ids
        .into_iter()
        .map(|id| {
            let episode = load_episode(&root.join(&id))?;
            Ok(NamedEpisode { id, episode })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { episodes })
}
