//! Expert behaviour: where the driver looks and how the driver controls the car.

use nalgebra::{Vector2, Vector3};
use rand::Rng;

use super::scene::{Scene, Side};
use crate::error::{Error, Result};
use crate::geometry::{forward_project, CameraExtrinsics, CameraIntrinsics, WorldPoint};
use crate::metrics::ControlSignal;
use crate::model::HighLevelCommand;

pub const CAMERA_HEIGHT: f64 = 1.5;

/// Ground-plane vehicle pose. `arc` is the road position the pose was derived
/// from and seeds nearest-point searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehiclePose {
    pub position: Vector2<f64>,
    pub heading: f64,
    pub arc: f64,
}

impl VehiclePose {
    pub fn forward(&self) -> Vector2<f64> {
        Vector2::new(self.heading.cos(), self.heading.sin())
    }

    pub fn left(&self) -> Vector2<f64> {
        Vector2::new(-self.heading.sin(), self.heading.cos())
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        Vector3::new(self.position.x, self.position.y, CAMERA_HEIGHT)
    }

    pub fn extrinsics(&self) -> Result<CameraExtrinsics> {
        CameraExtrinsics::from_ground_pose(self.camera_center(), self.heading)
    }

    /// Recovers the pose of a camera mounted at the standard height and its
    /// nearest road position.
    pub fn from_extrinsics(ext: &CameraExtrinsics, scene: &Scene) -> Self {
        let c = ext.center();
        let r = ext.rotation();
        let position = Vector2::new(c.x, c.y);
        let (arc, _) = scene.path.nearest(position);
        Self {
            position,
            heading: r[(2, 1)].atan2(r[(2, 0)]),
            arc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazePolicy {
    /// Probability of looking at a landmark on the commanded side when one is visible.
    pub side_bias: f64,
    /// Probability of looking at the road ahead rather than the nearest landmark
    /// when no turn is commanded.
    pub road_probability: f64,
    pub lookahead: f64,
    pub max_range: f64,
    /// Distance before a stop line from which its light takes priority.
    pub light_lead: f64,
    /// Fixation dwell time in frames (inclusive range).
    pub dwell: (usize, usize),
}

impl Default for GazePolicy {
    fn default() -> Self {
        Self {
            side_bias: 0.8,
            road_probability: 0.5,
            lookahead: 10.0,
            max_range: 40.0,
            light_lead: 25.0,
            dwell: (6, 14),
        }
    }
}

impl GazePolicy {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.side_bias) || !prob(self.road_probability) {
            return Err(Error::invalid("gaze probabilities must lie in [0, 1]"));
        }
        if !(self.lookahead > 0.0 && self.max_range > 0.0 && self.light_lead >= 0.0) {
            return Err(Error::invalid("gaze distances must be positive"));
        }
        if self.dwell.0 == 0 || self.dwell.0 > self.dwell.1 {
            return Err(Error::invalid("dwell range must be positive and ordered"));
        }
        Ok(())
    }
}

/// What the driver is fixating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GazeTarget {
    Landmark(usize),
    RoadAhead,
}

/// Task-relevant landmarks whose centres are in view within range.
pub fn visible_landmarks(
    scene: &Scene,
    pose: &VehiclePose,
    intr: &CameraIntrinsics,
    policy: &GazePolicy,
) -> Result<Vec<(usize, f64)>> {
    let ext = pose.extrinsics()?;
    let mut out = Vec::new();
    for (i, l) in scene.landmarks.iter().enumerate() {
        if !l.kind.is_task_relevant() {
            continue;
        }
        let depth = ext.to_camera(l.center).z;
        if depth <= policy.max_range && forward_project(l.center, &ext, intr).in_frame().is_some() {
            out.push((i, depth));
        }
    }
    Ok(out)
}

/// The light of the stop the vehicle is approaching or waiting at, when it is
/// within the lead distance and visible.
pub fn relevant_light(
    scene: &Scene,
    pose: &VehiclePose,
    intr: &CameraIntrinsics,
    policy: &GazePolicy,
) -> Result<Option<usize>> {
    let Some(k) = scene.next_stop(pose.arc) else {
        return Ok(None);
    };
    if scene.stops[k] - pose.arc > policy.light_lead {
        return Ok(None);
    }
    let Some(light) = scene.stop_light(k) else {
        return Ok(None);
    };
    let visible = visible_landmarks(scene, pose, intr, policy)?;
    Ok(visible.iter().any(|(i, _)| *i == light).then_some(light))
}

/// A visible light of an upcoming stop always wins; otherwise turns bias gaze
/// to their side and other commands split between the road and the nearest landmark.
pub fn choose_gaze_target<R: Rng>(
    scene: &Scene,
    pose: &VehiclePose,
    command: HighLevelCommand,
    intr: &CameraIntrinsics,
    policy: &GazePolicy,
    rng: &mut R,
) -> Result<GazeTarget> {
    if let Some(light) = relevant_light(scene, pose, intr, policy)? {
        return Ok(GazeTarget::Landmark(light));
    }
    let visible = visible_landmarks(scene, pose, intr, policy)?;
    let nearest = |cands: &[(usize, f64)]| {
        cands
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| GazeTarget::Landmark(*i))
    };
    Ok(match Side::of_command(command) {
        Some(side) => {
            let on_side: Vec<(usize, f64)> = visible
                .iter()
                .copied()
                .filter(|(i, _)| scene.landmarks[*i].side == side)
                .collect();
            if !on_side.is_empty() && rng.random_bool(policy.side_bias) {
                GazeTarget::Landmark(on_side[rng.random_range(0..on_side.len())].0)
            } else {
                GazeTarget::RoadAhead
            }
        }
        None => {
            if rng.random_bool(policy.road_probability) {
                GazeTarget::RoadAhead
            } else {
                nearest(&visible).unwrap_or(GazeTarget::RoadAhead)
            }
        }
    })
}

/// Road point `lookahead` metres ahead of the pose's road position.
pub fn road_ahead_point(scene: &Scene, pose: &VehiclePose, policy: &GazePolicy) -> WorldPoint {
    let p = scene.path.point_at(pose.arc + policy.lookahead);
    WorldPoint::new(p.x, p.y, 0.0).expect("finite path")
}

/// The fixated 3D point: the sphere surface facing the camera, or the road ahead.
pub fn gaze_point(scene: &Scene, pose: &VehiclePose, target: GazeTarget, policy: &GazePolicy) -> WorldPoint {
    match target {
        GazeTarget::RoadAhead => road_ahead_point(scene, pose, policy),
        GazeTarget::Landmark(i) => {
            let l = &scene.landmarks[i];
            let to_camera = pose.camera_center() - l.center.coords();
            let dir = to_camera / to_camera.norm();
            WorldPoint::from_vector(l.center.coords() + dir * l.radius).expect("finite landmark")
        }
    }
}

/// One gaze sample for the pose and command.
pub fn oracle_gaze<R: Rng>(
    scene: &Scene,
    pose: &VehiclePose,
    command: HighLevelCommand,
    intr: &CameraIntrinsics,
    policy: &GazePolicy,
    rng: &mut R,
) -> Result<WorldPoint> {
    let target = choose_gaze_target(scene, pose, command, intr, policy, rng)?;
    Ok(gaze_point(scene, pose, target, policy))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub wheelbase: f64,
    pub max_steer_angle: f64,
    pub lookahead_min: f64,
    /// Seconds of travel added to the pursuit distance.
    pub lookahead_time: f64,
    /// Acceleration (m/s²) that saturates throttle or brake.
    pub full_accel: f64,
    /// Throttle needed to hold speed, per m/s.
    pub cruise_throttle: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            max_steer_angle: 0.6,
            lookahead_min: 4.0,
            lookahead_time: 0.8,
            full_accel: 4.0,
            cruise_throttle: 0.05,
        }
    }
}

/// Pure-pursuit steering toward the road; positive steers right.
pub fn pursuit_steer(scene: &Scene, pose: &VehiclePose, speed: f64, cfg: &ControllerConfig) -> f64 {
    let distance = cfg.lookahead_min + cfg.lookahead_time * speed;
    let goal = scene.path.point_at(pose.arc + distance);
    let d = goal - pose.position;
    let (ahead, left) = (d.dot(&pose.forward()), d.dot(&pose.left()));
    let curvature = 2.0 * left / (ahead * ahead + left * left).max(1e-9);
    (-(cfg.wheelbase * curvature).atan() / cfg.max_steer_angle).clamp(-1.0, 1.0)
}

/// Throttle and brake that produce the change from `speed` to `next_speed`
/// over one frame; a car held at rest brakes fully.
pub fn pedals(speed: f64, next_speed: f64, fps: f64, cfg: &ControllerConfig) -> (f64, f64) {
    if speed < 0.1 && next_speed < 0.1 {
        return (0.0, 1.0);
    }
    let accel = (next_speed - speed) * fps;
    if accel >= 0.0 {
        (
            (cfg.cruise_throttle * speed + accel / cfg.full_accel).clamp(0.0, 1.0),
            0.0,
        )
    } else {
        let coast = cfg.cruise_throttle * speed + accel / cfg.full_accel;
        if coast >= 0.0 {
            (coast.min(1.0), 0.0)
        } else {
            (0.0, (-coast).min(1.0))
        }
    }
}

/// Expert controls at a pose; `speed` is recorded as the measured speed.
pub fn oracle_controls(
    scene: &Scene,
    pose: &VehiclePose,
    speed: f64,
    next_speed: f64,
    fps: f64,
    cfg: &ControllerConfig,
) -> Result<ControlSignal> {
    let steer = pursuit_steer(scene, pose, speed, cfg);
    let (throttle, brake) = pedals(speed, next_speed, fps, cfg);
    ControlSignal::new(steer, throttle, brake, speed)
}
