//! Flat-shaded rendering: sky, ground and road band by ray casting, then
//! landmark discs from far to near.

use nalgebra::{Vector2, Vector3};

use super::scene::Scene;
use crate::geometry::{CameraExtrinsics, CameraIntrinsics, DEPTH_EPSILON};
use crate::masking::Image;

pub const SKY: [u8; 3] = [153, 204, 242];
pub const GROUND: [u8; 3] = [77, 128, 51];
pub const ROAD: [u8; 3] = [89, 89, 89];
/// Ground beyond this distance is drawn as ground even on the road.
pub const DRAW_DISTANCE: f64 = 60.0;

fn rgb(c: [u8; 3]) -> [f64; 3] {
    c.map(|v| v as f64 / 255.0)
}

/// A landmark's disc in the image: centre, radius in pixels and depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedDisc {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub depth: f64,
    pub color: [f64; 3],
}

/// Discs of all landmarks in front of the camera, sorted far to near.
pub fn projected_discs(scene: &Scene, ext: &CameraExtrinsics, intr: &CameraIntrinsics) -> Vec<ProjectedDisc> {
    let (cx, cy) = intr.principal_point();
    let f = intr.focal();
    let mut discs: Vec<ProjectedDisc> = scene
        .landmarks
        .iter()
        .filter_map(|l| {
            let c = ext.to_camera(l.center);
            (c.z > DEPTH_EPSILON).then(|| ProjectedDisc {
                x: f * c.x / c.z + cx,
                y: f * c.y / c.z + cy,
                radius: f * l.radius / c.z,
                depth: c.z,
                color: l.color,
            })
        })
        .collect();
    discs.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    discs
}

pub fn render_frame(scene: &Scene, ext: &CameraExtrinsics, intr: &CameraIntrinsics) -> Image {
    let (w, h) = (intr.width() as usize, intr.height() as usize);
    let (cx, cy) = intr.principal_point();
    let f = intr.focal();
    let centre = ext.center();
    let rt = ext.rotation().transpose();
    let (cam_arc, _) = scene.path.nearest(Vector2::new(centre.x, centre.y));
    let lo = cam_arc - DRAW_DISTANCE - scene.road_width;
    let hi = cam_arc + DRAW_DISTANCE + scene.road_width;
    let half_road = scene.road_width / 2.0;
    let (sky, ground, road) = (rgb(SKY), rgb(GROUND), rgb(ROAD));

    let mut data = vec![0.0; w * h * 3];
    for j in 0..h {
        for i in 0..w {
            let ray = rt * Vector3::new((i as f64 - cx) / f, (j as f64 - cy) / f, 1.0);
            let color = if ray.z < -1e-12 {
                let t = -centre.z / ray.z;
                let hit = centre + ray * t;
                let flat = Vector2::new(hit.x, hit.y);
                if (flat - Vector2::new(centre.x, centre.y)).norm() <= DRAW_DISTANCE
                    && scene.path.nearest_in(flat, lo, hi).1 <= half_road
                {
                    road
                } else {
                    ground
                }
            } else {
                sky
            };
            data[(j * w + i) * 3..(j * w + i) * 3 + 3].copy_from_slice(&color);
        }
    }
    for d in projected_discs(scene, ext, intr) {
        let x0 = (d.x - d.radius).floor().max(0.0) as usize;
        let y0 = (d.y - d.radius).floor().max(0.0) as usize;
        let x1 = (d.x + d.radius).ceil().min(w as f64 - 1.0);
        let y1 = (d.y + d.radius).ceil().min(h as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for j in y0..=y1 as usize {
            for i in x0..=x1 as usize {
                let (dx, dy) = (i as f64 - d.x, j as f64 - d.y);
                if dx * dx + dy * dy <= d.radius * d.radius {
                    data[(j * w + i) * 3..(j * w + i) * 3 + 3].copy_from_slice(&d.color);
                }
            }
        }
    }
    Image::new(w, h, 3, data).expect("palette colours lie in [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WorldPoint;
    use crate::synth::path::RoadPath;
    use crate::synth::scene::{gen_scene, Landmark, LandmarkKind, SceneConfig, Side};

    fn empty_scene() -> Scene {
        Scene {
            landmarks: vec![],
            path: RoadPath::new(vec![Vector2::new(0.0, 0.0), Vector2::new(100.0, 0.0)]).unwrap(),
            segments: vec![],
            stops: vec![],
            road_width: 6.0,
            command_lead: 10.0,
        }
    }

    fn ground_camera(x: f64, y: f64, heading: f64) -> CameraExtrinsics {
        CameraExtrinsics::from_ground_pose(Vector3::new(x, y, 1.5), heading).unwrap()
    }

    #[test]
    fn empty_world_shows_sky_above_the_horizon() {
        let intr = CameraIntrinsics::new(16.0, 32, 32).unwrap();
        // looking away from the road: only sky and ground
        let img = render_frame(&empty_scene(), &ground_camera(0.0, 80.0, 1.5), &intr);
        assert_eq!(img.pixel(5, 3), &rgb(SKY));
        assert_eq!(img.pixel(5, 30), &rgb(GROUND));
        let on_road = render_frame(&empty_scene(), &ground_camera(0.0, 0.0, 0.0), &intr);
        assert_eq!(on_road.pixel(16, 30), &rgb(ROAD));
    }

    #[test]
    fn landmark_on_the_optical_axis_is_centred() {
        let mut scene = empty_scene();
        scene.landmarks.push(Landmark {
            center: WorldPoint::new(10.0, 0.0, 1.5).unwrap(),
            radius: 1.0,
            color: LandmarkKind::Vehicle.color(),
            kind: LandmarkKind::Vehicle,
            side: Side::Left,
            arc: 10.0,
        });
        let intr = CameraIntrinsics::new(16.0, 32, 32).unwrap();
        let ext = ground_camera(0.0, 0.0, 0.0);
        let discs = projected_discs(&scene, &ext, &intr);
        assert!((discs[0].x - 16.0).abs() < 1e-9 && (discs[0].y - 16.0).abs() < 1e-9);
        let img = render_frame(&scene, &ext, &intr);
        assert_eq!(img.pixel(16, 16), &LandmarkKind::Vehicle.color());
        assert_eq!(img.pixel(17, 17), &LandmarkKind::Vehicle.color());
    }

    #[test]
    fn disc_coverage_matches_per_pixel_oracle() {
        let scene = gen_scene(2, &SceneConfig::default()).unwrap();
        let intr = CameraIntrinsics::new(32.0, 64, 64).unwrap();
        let s = 40.0;
        let p = scene.path.point_at(s);
        let ext = ground_camera(p.x, p.y, scene.path.heading_at(s));
        let img = render_frame(&scene, &ext, &intr);
        // oracle: for every pixel, the nearest landmark sphere whose projected
        // disc contains the pixel, computed independently of the renderer
        let mut disagreements = 0;
        for j in 0..64 {
            for i in 0..64 {
                let mut best: Option<(f64, [f64; 3])> = None;
                for l in &scene.landmarks {
                    let c = ext.rotation() * l.center.coords() + ext.translation();
                    if c.z <= 1e-9 {
                        continue;
                    }
                    let (u, v, r) = (32.0 * c.x / c.z + 32.0, 32.0 * c.y / c.z + 32.0, 32.0 * l.radius / c.z);
                    let inside = (i as f64 - u).powi(2) + (j as f64 - v).powi(2) <= r * r;
                    if inside && best.is_none_or(|(d, _)| c.z < d) {
                        best = Some((c.z, l.color));
                    }
                }
                if let Some((_, color)) = best {
                    if img.pixel(i, j) != color {
                        disagreements += 1;
                    }
                } else if scene.landmarks.iter().any(|l| img.pixel(i, j) == l.color) {
                    disagreements += 1;
                }
            }
        }
        assert!(disagreements as f64 <= 0.01 * 4096.0, "{disagreements}");
    }
}
