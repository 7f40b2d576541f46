//! Procedural driving world: scenes, a flat-shaded renderer, an expert
//! driver and episode generation.

pub mod episode;
pub mod oracle;
pub mod path;
pub mod render;
pub mod scene;

pub use episode::{gen_episode, EpisodeConfig};
pub use oracle::{oracle_controls, oracle_gaze, ControllerConfig, GazePolicy, GazeTarget, VehiclePose};
pub use path::RoadPath;
pub use render::render_frame;
pub use scene::{gen_scene, Landmark, LandmarkKind, PathSegment, Scene, SceneConfig, Side};
