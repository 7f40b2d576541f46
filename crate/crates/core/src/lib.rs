//! Gaze-attention pipeline for driving: camera projection, fixation maps,
//! attention masking, saliency and control metrics, toy gaze and driving
//! models, a synthetic driving world and on-disk formats.

pub mod attention;
pub mod dataset;
pub mod episode;
pub mod error;
pub mod geometry;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
