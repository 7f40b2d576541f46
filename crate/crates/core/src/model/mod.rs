//! Toy-scale differentiable models: the intention-branched gaze predictor and
//! the command-conditioned driving agents, on top of a small reverse-mode tape.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub mod agent;
pub mod checkpoint;
pub mod eval;
pub mod gaze;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use agent::{
    agent_forward, agent_train_step, init_agent_params, AgentConfig, AgentSample, AgentVariant, ConvLayer,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, LossLog};
pub use eval::{
    evaluate_agent, evaluate_agent_with, evaluate_gaze, evaluate_gaze_with, AgentScores, AgentSource, EvalSeries,
    GazeEvaluation, GazeSource, SplitScores,
};
pub use gaze::{
    clip_from_frames, gaze_forward, gaze_train_step, init_gaze_params, GazeNetConfig, GazePhase, GazeSample,
    GazeSchedule,
};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use params::{Gradients, ParameterSet};
pub use tape::{Graph, Var};
pub use tensor::Tensor;
pub use train::{train_agent, train_gaze, TrainConfig};

/// Driver intention for the upcoming maneuver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HighLevelCommand {
    Follow,
    Left,
    Right,
    Straight,
    NoCommand,
}

impl HighLevelCommand {
    pub const ALL: [HighLevelCommand; 5] = [
        HighLevelCommand::Follow,
        HighLevelCommand::Left,
        HighLevelCommand::Right,
        HighLevelCommand::Straight,
        HighLevelCommand::NoCommand,
    ];

    /// The four commands that own a gaze branch.
    pub const GAZE_BRANCHES: [HighLevelCommand; 4] = [
        HighLevelCommand::Follow,
        HighLevelCommand::Left,
        HighLevelCommand::Right,
        HighLevelCommand::Straight,
    ];

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            HighLevelCommand::Follow => "follow",
            HighLevelCommand::Left => "left",
            HighLevelCommand::Right => "right",
            HighLevelCommand::Straight => "straight",
            HighLevelCommand::NoCommand => "none",
        }
    }

    /// Gaze branch used when precomputing maps: frames without a command use Follow.
    pub fn gaze_branch(&self) -> HighLevelCommand {
        match self {
            HighLevelCommand::NoCommand => HighLevelCommand::Follow,
            c => *c,
        }
    }
}

impl fmt::Display for HighLevelCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HighLevelCommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HighLevelCommand::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown command '{s}'")))
    }
}
