//! Scripted drives through a scene with expert gaze and controls.

use std::f64::consts::TAU;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::oracle::{
    choose_gaze_target, gaze_point, oracle_controls, relevant_light, visible_landmarks, ControllerConfig, GazePolicy,
    GazeTarget, VehiclePose,
};
use super::render::render_frame;
use super::scene::Scene;
use crate::attention::GazeRecord;
use crate::episode::{ActivityLabel, Episode, Frame, DEFAULT_FPS};
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::model::HighLevelCommand;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub frames: usize,
    pub image_size: (u32, u32),
    pub fps: f64,
    pub cruise_speed: f64,
    /// Speed when rolling up to a stop line.
    pub approach_speed: f64,
    pub accel: f64,
    pub decel: f64,
    /// Cruise speed is divided by `1 + curve_slowdown · |curvature|`.
    pub curve_slowdown: f64,
    /// Fraction of frames spent stationary in traffic.
    pub traffic_fraction: f64,
    pub weave_amplitude: f64,
    pub weave_wavelength: f64,
    /// Standard deviation (m) of the per-frame lateral pose perturbation.
    pub action_noise: f64,
    pub gaze: GazePolicy,
    pub controller: ControllerConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            frames: 500,
            image_size: (64, 64),
            fps: DEFAULT_FPS,
            cruise_speed: 7.0,
            approach_speed: 1.0,
            accel: 3.0,
            decel: 4.0,
            curve_slowdown: 12.0,
            traffic_fraction: 0.327,
            weave_amplitude: 0.4,
            weave_wavelength: 40.0,
            action_noise: 0.0,
            gaze: GazePolicy::default(),
            controller: ControllerConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::invalid("an episode needs at least one frame"));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        let positive = [
            self.fps,
            self.cruise_speed,
            self.approach_speed,
            self.accel,
            self.decel,
            self.weave_wavelength,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("rates, speeds and wavelengths must be positive"));
        }
        if self.accel / self.fps < 0.1 {
            return Err(Error::invalid(
                "acceleration must clear the traffic speed threshold in one frame",
            ));
        }
        if !(0.0..1.0).contains(&self.traffic_fraction) {
            return Err(Error::invalid("traffic fraction must lie in [0, 1)"));
        }
        if !(self.curve_slowdown >= 0.0 && self.weave_amplitude >= 0.0 && self.action_noise >= 0.0) {
            return Err(Error::invalid("slowdown, weave and noise must be non-negative"));
        }
        self.gaze.validate()
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        let (w, h) = self.image_size;
        CameraIntrinsics::new(w as f64 / 2.0, w, h)
    }
}

/// Path distance kept free beyond the last frame for lookahead queries.
const END_MARGIN: f64 = 25.0;

/// Largest curvature of the circle through road points 2 m apart, within
/// `distance` ahead.
fn max_curvature(scene: &Scene, from: f64, distance: f64) -> f64 {
    const SPACING: f64 = 2.0;
    let mut k: f64 = 0.0;
    let mut s = from;
    while s <= from + distance {
        let a = scene.path.point_at(s);
        let b = scene.path.point_at(s + SPACING);
        let c = scene.path.point_at(s + 2.0 * SPACING);
        let (ab, bc, ca) = (b - a, c - b, a - c);
        let cross = ab.x * bc.y - ab.y * bc.x;
        let sides = ab.norm() * bc.norm() * ca.norm();
        if sides > 0.0 {
            k = k.max(2.0 * cross.abs() / sides);
        }
        s += 1.0;
    }
    k
}

struct Kinematics {
    arc: f64,
    speed: f64,
    traffic: bool,
}

/// Driving frames first, then traffic frames inserted at the stop lines reached.
fn plan_motion(scene: &Scene, cfg: &EpisodeConfig) -> Result<Vec<Kinematics>> {
    let traffic_total = (cfg.frames as f64 * cfg.traffic_fraction).round() as usize;
    let driving = cfg.frames - traffic_total;
    if driving == 0 {
        return Err(Error::invalid("traffic fraction leaves no driving frames"));
    }
    let dt = 1.0 / cfg.fps;
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut stop_events = Vec::new();
    let mut next_stop = 0;
    let (mut s, mut v) = (0.0, cfg.cruise_speed * 0.5);
    for k in 0..driving {
        if s > scene.path.length() - END_MARGIN {
            return Err(Error::invalid(format!(
                "road of {:.0} m is too short for {} frames",
                scene.path.length(),
                cfg.frames
            )));
        }
        frames.push(Kinematics {
            arc: s,
            speed: v,
            traffic: false,
        });
        let mut target = cfg.cruise_speed / (1.0 + cfg.curve_slowdown * max_curvature(scene, s, 12.0));
        if let Some(stop) = scene.stops.get(next_stop) {
            let room = (stop - s).max(0.0);
            target = target.min((cfg.approach_speed.powi(2) + 2.0 * cfg.decel * room).sqrt());
        }
        let next_v = target.clamp(v - cfg.decel * dt, v + cfg.accel * dt).max(0.0);
        let next_s = s + v * dt;
        match scene.stops.get(next_stop) {
            Some(stop) if next_s >= *stop => {
                // halt on the line; the next driving frame pulls away from rest
                s = *stop;
                v = 0.0;
                stop_events.push(k + 1);
                next_stop += 1;
            }
            _ => {
                s = next_s;
                v = next_v;
            }
        }
        if v == 0.0 {
            v = (cfg.accel * dt).min(cfg.cruise_speed);
        }
    }
    stop_events.retain(|e| *e < driving);
    let mut counts = vec![0; stop_events.len()];
    for i in 0..traffic_total {
        if !counts.is_empty() {
            let n = counts.len();
            counts[i % n] += 1;
        }
    }
    let mut out = Vec::with_capacity(cfg.frames);
    let mut event = 0;
    for (k, f) in frames.into_iter().enumerate() {
        if event < stop_events.len() && stop_events[event] == k {
            for _ in 0..counts[event] {
                out.push(Kinematics {
                    arc: f.arc,
                    speed: 0.0,
                    traffic: true,
                });
            }
            event += 1;
        }
        out.push(f);
    }
    if stop_events.is_empty() {
        let last = out.last().map(|f| f.arc).unwrap_or(0.0);
        out.extend((0..traffic_total).map(|_| Kinematics {
            arc: last,
            speed: 0.0,
            traffic: true,
        }));
    }
    Ok(out)
}

fn weave(cfg: &EpisodeConfig, phase: f64, s: f64) -> (f64, f64) {
    let w = TAU / cfg.weave_wavelength;
    let offset = cfg.weave_amplitude * (w * s + phase).sin();
    let slope = cfg.weave_amplitude * w * (w * s + phase).cos();
    (offset, slope)
}

fn pose_at(scene: &Scene, arc: f64, lateral: f64, heading_offset: f64) -> VehiclePose {
    let t = scene.path.tangent_at(arc);
    let left = Vector2::new(-t.y, t.x);
    VehiclePose {
        position: scene.path.point_at(arc) + left * lateral,
        heading: scene.path.heading_at(arc) + heading_offset,
        arc,
    }
}

/// Generates an episode; identical `(scene, seed, cfg)` give identical episodes.
pub fn gen_episode(scene: &Scene, seed: u64, cfg: &EpisodeConfig) -> Result<Episode> {
    cfg.validate()?;
    let intr = cfg.intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let motion = plan_motion(scene, cfg)?;
    let phase = rng.random_range(0.0..TAU);

    let mut noise = (0.0, 0.0);
    let mut target: Option<(GazeTarget, usize, HighLevelCommand)> = None;
    let mut rows = Vec::with_capacity(motion.len());
    for (i, m) in motion.iter().enumerate() {
        let (offset, slope) = weave(cfg, phase, m.arc);
        let expert = pose_at(scene, m.arc, offset, slope.atan());
        if cfg.action_noise > 0.0 && !m.traffic {
            let e1: f64 = rng.random_range(-1.0..1.0) * 3f64.sqrt();
            let e2: f64 = rng.random_range(-1.0..1.0) * 3f64.sqrt();
            noise = (
                0.9 * noise.0 + cfg.action_noise * e1,
                0.9 * noise.1 + 0.2 * cfg.action_noise * e2,
            );
        }
        let actual = pose_at(scene, m.arc, offset + noise.0, slope.atan() + noise.1);
        let command = scene.command_at(m.arc);

        let light = relevant_light(scene, &actual, &intr, &cfg.gaze)?;
        let still_valid = match target {
            _ if light.is_some() && target.map(|t| t.0) != light.map(GazeTarget::Landmark) => false,
            Some((GazeTarget::Landmark(l), left, cmd)) if left > 0 && cmd == command => {
                visible_landmarks(scene, &actual, &intr, &cfg.gaze)?
                    .iter()
                    .any(|(j, _)| *j == l)
            }
            Some((GazeTarget::RoadAhead, left, cmd)) => left > 0 && cmd == command,
            _ => false,
        };
        if !still_valid {
            let t = choose_gaze_target(scene, &actual, command, &intr, &cfg.gaze, &mut rng)?;
            let dwell = rng.random_range(cfg.gaze.dwell.0..=cfg.gaze.dwell.1);
            target = Some((t, dwell, command));
        }
        let (t, left, cmd) = target.expect("target chosen above");
        target = Some((t, left - 1, cmd));
        let gaze = GazeRecord {
            frame_index: i,
            point: gaze_point(scene, &actual, t, &cfg.gaze),
            valid: true,
        };

        let expert_ext = expert.extrinsics()?;
        let measured = VehiclePose::from_extrinsics(&expert_ext, scene);
        let next_speed = motion.get(i + 1).map_or(m.speed, |n| n.speed);
        let control = oracle_controls(scene, &measured, m.speed, next_speed, cfg.fps, &cfg.controller)?;
        let label = if m.traffic {
            ActivityLabel::Traffic
        } else {
            ActivityLabel::Driving
        };
        rows.push((actual.extrinsics()?, gaze, control, command, label));
    }

    let frames = rows
        .into_par_iter()
        .map(|(extrinsics, gaze, control, command, label)| Frame {
            image: render_frame(scene, &extrinsics, &intr),
            extrinsics,
            gaze,
            control,
            command,
            label,
        })
        .collect();
    Ok(Episode {
        intrinsics: intr,
        fps: cfg.fps,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{build_attention_map, peak_normalize, window_fixations, MapConfig};
    use crate::geometry::{forward_project, ProjectionStatus};
    use crate::synth::render::projected_discs;
    use crate::synth::scene::{gen_scene, SceneConfig};

    fn small() -> EpisodeConfig {
        EpisodeConfig {
            frames: 300,
            image_size: (32, 32),
            ..EpisodeConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let scene = gen_scene(0, &SceneConfig::default()).unwrap();
        let cfg = EpisodeConfig {
            action_noise: 0.05,
            ..small()
        };
        let a = gen_episode(&scene, 1, &cfg).unwrap();
        let b = gen_episode(&scene, 1, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        a.validate().unwrap();
    }

    #[test]
    fn controls_replay_from_poses_without_noise() {
        let scene = gen_scene(1, &SceneConfig::default()).unwrap();
        let cfg = small();
        let ep = gen_episode(&scene, 2, &cfg).unwrap();
        for (i, f) in ep.frames.iter().enumerate() {
            let pose = VehiclePose::from_extrinsics(&f.extrinsics, &scene);
            let next = ep.frames.get(i + 1).map_or(f.control.speed, |n| n.control.speed);
            let c = oracle_controls(&scene, &pose, f.control.speed, next, cfg.fps, &cfg.controller).unwrap();
            assert_eq!(c, f.control, "frame {i}");
        }
    }

    #[test]
    fn noise_moves_poses_but_not_controls() {
        let scene = gen_scene(1, &SceneConfig::default()).unwrap();
        let clean = gen_episode(&scene, 2, &small()).unwrap();
        let noisy = gen_episode(
            &scene,
            2,
            &EpisodeConfig {
                action_noise: 0.1,
                ..small()
            },
        )
        .unwrap();
        let controls = |e: &Episode| e.frames.iter().map(|f| f.control).collect::<Vec<_>>();
        assert_eq!(controls(&clean), controls(&noisy));
        assert!(clean
            .frames
            .iter()
            .zip(&noisy.frames)
            .any(|(a, b)| a.extrinsics != b.extrinsics));
    }

    #[test]
    fn gaze_lies_on_a_target() {
        let scene = gen_scene(3, &SceneConfig::default()).unwrap();
        let ep = gen_episode(&scene, 3, &small()).unwrap();
        for f in &ep.frames {
            let p = f.gaze.point;
            let on_landmark = scene
                .landmarks
                .iter()
                .filter(|l| l.kind.is_task_relevant())
                .map(|l| ((p.coords() - l.center.coords()).norm() - l.radius).abs())
                .fold(f64::INFINITY, f64::min);
            let on_road = if p.z() == 0.0 {
                scene.path.nearest(Vector2::new(p.x(), p.y())).1
            } else {
                f64::INFINITY
            };
            assert!(on_landmark.min(on_road) < 1e-6);
        }
    }

    #[test]
    fn traffic_frames_are_stationary_and_counted() {
        let scene = gen_scene(4, &SceneConfig::default()).unwrap();
        let ep = gen_episode(&scene, 4, &small()).unwrap();
        let traffic: Vec<_> = ep.frames.iter().filter(|f| f.label == ActivityLabel::Traffic).collect();
        assert_eq!(traffic.len(), (300.0f64 * 0.327).round() as usize);
        assert!(traffic.iter().all(|f| f.control.speed < 0.1));
        for w in ep.frames.windows(2) {
            if w[0].label == ActivityLabel::Traffic && w[1].label == ActivityLabel::Traffic {
                assert_eq!(w[0].control.brake, 1.0);
            }
        }
        assert!(ep
            .frames
            .iter()
            .filter(|f| f.label == ActivityLabel::Driving)
            .all(|f| f.control.speed >= 0.1));
    }

    #[test]
    fn gaze_rarely_leaves_the_frame() {
        let (mut out, mut total) = (0, 0);
        for seed in 0..10 {
            let scene = gen_scene(seed, &SceneConfig::default()).unwrap();
            let ep = gen_episode(&scene, seed, &small()).unwrap();
            for f in &ep.frames {
                total += 1;
                if forward_project(f.gaze.point, &f.extrinsics, &ep.intrinsics).status() != ProjectionStatus::InFrame {
                    out += 1;
                }
            }
        }
        assert!((out as f64) < 0.05 * total as f64, "{out}/{total}");
    }

    #[test]
    fn hard_mask_keeps_the_relevant_light() {
        let scene = gen_scene(6, &SceneConfig::default()).unwrap();
        let cfg = EpisodeConfig::default();
        let ep = gen_episode(&scene, 6, &cfg).unwrap();
        let records = ep.gaze_records();
        let map_cfg = MapConfig::for_width(ep.intrinsics.width());
        let mut checked = 0;
        for (t, f) in ep.frames.iter().enumerate() {
            let pose = VehiclePose::from_extrinsics(&f.extrinsics, &scene);
            let Some(light) = relevant_light(&scene, &pose, &ep.intrinsics, &cfg.gaze).unwrap() else {
                continue;
            };
            let fixations = window_fixations(&records, t, &map_cfg).unwrap();
            let weights = peak_normalize(&build_attention_map(
                &fixations,
                &f.extrinsics,
                &ep.intrinsics,
                &map_cfg,
            ))
            .unwrap();
            let disc = projected_discs(&scene, &f.extrinsics, &ep.intrinsics)
                .into_iter()
                .find(|d| d.depth == f.extrinsics.to_camera(scene.landmarks[light].center).z)
                .unwrap();
            let (w, h) = (ep.intrinsics.width() as usize, ep.intrinsics.height() as usize);
            for j in 0..h {
                for i in 0..w {
                    if (i as f64 - disc.x).powi(2) + (j as f64 - disc.y).powi(2) <= disc.radius.powi(2) {
                        assert!(weights[j * w + i] > 0.0, "frame {t} pixel ({i}, {j})");
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn short_roads_are_rejected() {
        let scene = gen_scene(
            0,
            &SceneConfig {
                segments: 1,
                ..SceneConfig::default()
            },
        )
        .unwrap();
        assert!(gen_episode(&scene, 0, &small()).is_err());
    }
}
