//! Time-indexed driving recordings shared by the generator, the formats and evaluation.

use std::fmt;
use std::str::FromStr;

use crate::attention::GazeRecord;
use crate::error::{Error, Result};
use crate::geometry::{CameraExtrinsics, CameraIntrinsics};
use crate::masking::Image;
use crate::metrics::ControlSignal;
use crate::model::HighLevelCommand;

pub const DEFAULT_FPS: f64 = 25.0;

/// Whether the vehicle is moving or held up by traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivityLabel {
    Driving,
    Traffic,
}

impl ActivityLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActivityLabel::Driving => "driving",
            ActivityLabel::Traffic => "traffic",
        }
    }
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "driving" => Ok(ActivityLabel::Driving),
            "traffic" => Ok(ActivityLabel::Traffic),
            other => Err(Error::invalid(format!("unknown activity label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub extrinsics: CameraExtrinsics,
    pub image: Image,
    pub gaze: GazeRecord,
    pub control: ControlSignal,
    pub command: HighLevelCommand,
    pub label: ActivityLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub intrinsics: CameraIntrinsics,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn gaze_records(&self) -> Vec<GazeRecord> {
        self.frames.iter().map(|f| f.gaze).collect()
    }

    /// Checks that frame indices are sequential and images match the intrinsics.
    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::invalid(format!("framerate {} must be positive", self.fps)));
        }
        let dims = (self.intrinsics.width() as usize, self.intrinsics.height() as usize);
        for (i, f) in self.frames.iter().enumerate() {
            if f.gaze.frame_index != i {
                return Err(Error::invalid(format!(
                    "gaze record {} stored at frame {i}",
                    f.gaze.frame_index
                )));
            }
            if (f.image.width(), f.image.height()) != dims {
                return Err(Error::dims(dims, (f.image.width(), f.image.height())));
            }
        }
        Ok(())
    }

    pub fn traffic_fraction(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        let n = self.frames.iter().filter(|f| f.label == ActivityLabel::Traffic).count();
        n as f64 / self.frames.len() as f64
    }
}
