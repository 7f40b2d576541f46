//! Seeded scene layout: a road built from scripted maneuvers and coloured
//! landmark spheres beside it.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::path::RoadPath;
use crate::error::{Error, Result};
use crate::geometry::WorldPoint;
use crate::model::HighLevelCommand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LandmarkKind {
    Vehicle,
    Pedestrian,
    Light,
    Sign,
    Distractor,
}

impl LandmarkKind {
    /// Flat colour, exactly representable with 8 bits per channel.
    pub fn color(&self) -> [f64; 3] {
        let rgb: [u8; 3] = match self {
            LandmarkKind::Vehicle => [204, 26, 26],
            LandmarkKind::Pedestrian => [26, 51, 230],
            LandmarkKind::Light => [255, 217, 0],
            LandmarkKind::Sign => [26, 204, 51],
            LandmarkKind::Distractor => [230, 77, 230],
        };
        rgb.map(|c| c as f64 / 255.0)
    }

    /// Whether the driver ever looks at it.
    pub fn is_task_relevant(&self) -> bool {
        *self != LandmarkKind::Distractor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    /// The side a turn command points to.
    pub fn of_command(command: HighLevelCommand) -> Option<Side> {
        match command {
            HighLevelCommand::Left => Some(Side::Left),
            HighLevelCommand::Right => Some(Side::Right),
            _ => None,
        }
    }
}

/// A sphere beside the road.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub center: WorldPoint,
    pub radius: f64,
    pub color: [f64; 3],
    pub kind: LandmarkKind,
    /// Side of the road relative to the direction of travel.
    pub side: Side,
    /// Arc length of the road point the landmark was placed beside.
    pub arc: f64,
}

/// A scripted stretch of road with the command the expert receives on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSegment {
    pub command: HighLevelCommand,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub segments: usize,
    pub road_width: f64,
    pub vehicles: usize,
    pub pedestrians: usize,
    pub signs: usize,
    /// Traffic stops, each marked by a light.
    pub stops: usize,
    pub distractors: usize,
    /// Distance before a junction from which its command is announced.
    pub command_lead: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            segments: 12,
            road_width: 6.0,
            vehicles: 12,
            pedestrians: 10,
            signs: 10,
            stops: 6,
            distractors: 10,
            command_lead: 5.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::invalid("a scene needs at least one road segment"));
        }
        if !(self.road_width.is_finite() && self.road_width > 0.0) {
            return Err(Error::invalid("road width must be positive"));
        }
        if !(self.command_lead.is_finite() && self.command_lead >= 0.0) {
            return Err(Error::invalid("command lead must be non-negative"));
        }
        Ok(())
    }

    pub fn landmark_count(&self) -> usize {
        self.vehicles + self.pedestrians + self.signs + self.stops + self.distractors
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub landmarks: Vec<Landmark>,
    pub path: RoadPath,
    pub segments: Vec<PathSegment>,
    /// Arc lengths of the stop lines.
    pub stops: Vec<f64>,
    pub road_width: f64,
    pub command_lead: f64,
}

const SAMPLE_STEP: f64 = 0.5;
const TURN_RADIUS: f64 = 8.0;
const FOLLOW_LENGTH: f64 = 14.0;
const STRAIGHT_LENGTH: f64 = 12.0;
const TURN_APPROACH: f64 = 3.0;
/// Lights stand this far past their stop line so they stay in view while waiting.
pub const STOP_LIGHT_DISTANCE: f64 = 10.0;

struct Builder {
    points: Vec<Vector2<f64>>,
    heading: f64,
    arc: f64,
}

impl Builder {
    /// Appends a constant-curvature piece (positive curvature turns left).
    fn run(&mut self, length: f64, curvature: f64) {
        let steps = (length / SAMPLE_STEP).ceil().max(1.0) as usize;
        let ds = length / steps as f64;
        for _ in 0..steps {
            let p = *self.points.last().expect("builder starts with a point");
            let mid = self.heading + 0.5 * curvature * ds;
            self.points.push(p + Vector2::new(mid.cos(), mid.sin()) * ds);
            self.heading += curvature * ds;
        }
        self.arc += length;
    }
}

impl Scene {
    /// Command in effect at arc length `s`: the segment's own command, or the
    /// next junction's when it starts within the announcement distance.
    pub fn command_at(&self, s: f64) -> HighLevelCommand {
        let i = self
            .segments
            .iter()
            .position(|seg| s < seg.end)
            .unwrap_or(self.segments.len() - 1);
        let seg = self.segments[i];
        if seg.command == HighLevelCommand::Follow {
            if let Some(next) = self.segments.get(i + 1) {
                if next.command != HighLevelCommand::Follow && next.start - s <= self.command_lead {
                    return next.command;
                }
            }
        }
        seg.command
    }

    pub fn landmark_count(&self) -> usize {
        self.landmarks.len()
    }

    /// First stop line at or ahead of `arc`.
    pub fn next_stop(&self, arc: f64) -> Option<usize> {
        self.stops.iter().position(|s| *s >= arc - 1e-9)
    }

    /// The light marking stop `k`.
    pub fn stop_light(&self, k: usize) -> Option<usize> {
        let stop = *self.stops.get(k)?;
        self.landmarks
            .iter()
            .position(|l| l.kind == LandmarkKind::Light && l.arc >= stop && l.arc <= stop + STOP_LIGHT_DISTANCE + 1e-9)
    }
}

fn left_normal(path: &RoadPath, s: f64) -> Vector2<f64> {
    let t = path.tangent_at(s);
    Vector2::new(-t.y, t.x)
}

/// Deterministic scene for `seed`.
pub fn gen_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        points: vec![Vector2::zeros()],
        heading: 0.0,
        arc: 0.0,
    };
    let mut segments = Vec::with_capacity(cfg.segments);
    // net quarter turns so far; kept within ±1 so the road never folds back
    let mut turns: i32 = 0;
    for i in 0..cfg.segments {
        let command = if i == 0 {
            HighLevelCommand::Follow
        } else {
            let mut options = vec![HighLevelCommand::Follow, HighLevelCommand::Straight];
            if turns < 1 {
                options.push(HighLevelCommand::Left);
            }
            if turns > -1 {
                options.push(HighLevelCommand::Right);
            }
            options[rng.random_range(0..options.len())]
        };
        let start = b.arc;
        match command {
            HighLevelCommand::Left | HighLevelCommand::Right => {
                let sign = if command == HighLevelCommand::Left { 1.0 } else { -1.0 };
                b.run(TURN_APPROACH, 0.0);
                b.run(FRAC_PI_2 * TURN_RADIUS, sign / TURN_RADIUS);
                b.run(TURN_APPROACH, 0.0);
                turns += sign as i32;
            }
            HighLevelCommand::Straight => b.run(STRAIGHT_LENGTH, 0.0),
            _ => {
                let k = rng.random_range(-1.0..1.0) / 40.0;
                b.run(FOLLOW_LENGTH / 2.0, k);
                b.run(FOLLOW_LENGTH / 2.0, -k);
            }
        }
        segments.push(PathSegment {
            command,
            start,
            end: b.arc,
        });
    }
    let path = RoadPath::new(b.points)?;
    let length = path.length();

    let stops: Vec<f64> = (0..cfg.stops)
        .map(|k| length * (k as f64 + 0.5) / (cfg.stops as f64 + 0.5))
        .collect();

    let mut landmarks = Vec::with_capacity(cfg.landmark_count());
    let clearance = cfg.road_width / 2.0 + 0.5;
    let place = |rng: &mut ChaCha8Rng,
                 kind: LandmarkKind,
                 arc: Option<f64>,
                 side: Option<Side>,
                 lateral: (f64, f64),
                 radius: (f64, f64),
                 height: Option<f64>|
     -> Result<Landmark> {
        for _ in 0..200 {
            let s = arc.unwrap_or_else(|| rng.random_range(8.0f64.min(length)..length));
            let side = side.unwrap_or(if rng.random_bool(0.5) { Side::Left } else { Side::Right });
            let r = rng.random_range(radius.0..=radius.1);
            let d = rng.random_range(lateral.0..=lateral.1);
            let xy = path.point_at(s) + left_normal(&path, s) * (side.sign() * d);
            let (_, dist) = path.nearest(xy);
            if dist < clearance + r && arc.is_none() {
                continue;
            }
            let z = height.unwrap_or(r);
            return Ok(Landmark {
                center: WorldPoint::new(xy.x, xy.y, z)?,
                radius: r,
                color: kind.color(),
                kind,
                side,
                arc: s,
            });
        }
        Err(Error::invalid("could not place a landmark clear of the road"))
    };
    for &s in &stops {
        landmarks.push(place(
            &mut rng,
            LandmarkKind::Light,
            Some((s + STOP_LIGHT_DISTANCE).min(length)),
            Some(Side::Right),
            (4.5, 4.5),
            (0.5, 0.5),
            Some(3.0),
        )?);
    }
    for _ in 0..cfg.vehicles {
        landmarks.push(place(
            &mut rng,
            LandmarkKind::Vehicle,
            None,
            None,
            (4.5, 5.5),
            (0.9, 1.1),
            None,
        )?);
    }
    for _ in 0..cfg.pedestrians {
        landmarks.push(place(
            &mut rng,
            LandmarkKind::Pedestrian,
            None,
            None,
            (4.0, 7.0),
            (0.4, 0.5),
            None,
        )?);
    }
    for _ in 0..cfg.signs {
        landmarks.push(place(
            &mut rng,
            LandmarkKind::Sign,
            None,
            None,
            (4.5, 6.0),
            (0.4, 0.5),
            Some(2.2),
        )?);
    }
    for _ in 0..cfg.distractors {
        landmarks.push(place(
            &mut rng,
            LandmarkKind::Distractor,
            None,
            None,
            (12.0, 20.0),
            (1.2, 2.0),
            None,
        )?);
    }
    Ok(Scene {
        landmarks,
        path,
        segments,
        stops,
        road_width: cfg.road_width,
        command_lead: cfg.command_lead,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_seed_dependent() {
        let cfg = SceneConfig::default();
        let a = gen_scene(3, &cfg).unwrap();
        assert_eq!(a, gen_scene(3, &cfg).unwrap());
        let b = gen_scene(4, &cfg).unwrap();
        assert_ne!(a.landmarks, b.landmarks);
    }

    #[test]
    fn landmark_counts_and_placement() {
        let cfg = SceneConfig::default();
        for seed in 0..5 {
            let s = gen_scene(seed, &cfg).unwrap();
            assert_eq!(s.landmark_count(), cfg.landmark_count());
            let count = |k| s.landmarks.iter().filter(|l| l.kind == k).count();
            assert_eq!(count(LandmarkKind::Light), cfg.stops);
            assert_eq!(count(LandmarkKind::Distractor), cfg.distractors);
            for l in s.landmarks.iter().filter(|l| l.kind.is_task_relevant()) {
                let (_, d) = s.path.nearest(Vector2::new(l.center.x(), l.center.y()));
                assert!(d <= 20.0 && l.radius > 0.0);
            }
            assert!(s.path.vertices().len() >= 2);
            for k in 0..cfg.stops {
                let light = s.stop_light(k).unwrap();
                assert_eq!(s.landmarks[light].kind, LandmarkKind::Light);
            }
        }
    }

    #[test]
    fn commands_announce_the_next_junction() {
        let s = gen_scene(1, &SceneConfig::default()).unwrap();
        for w in s.segments.windows(2) {
            if w[0].command == HighLevelCommand::Follow {
                assert_eq!(s.command_at(w[1].start - 0.1), w[1].command);
            }
            assert_eq!(s.command_at(w[1].start + 0.1), w[1].command);
        }
    }

    #[test]
    fn zero_length_path_is_rejected() {
        let cfg = SceneConfig {
            segments: 0,
            ..SceneConfig::default()
        };
        assert!(gen_scene(0, &cfg).is_err());
    }
}
