//! Pinhole camera models and forward projection of world points into pixels.
//!
//! A world point `p` is mapped to camera coordinates by `c = R·p + t` and then
//! onto the image plane by the intrinsic matrix
//!
//! ```text
//! | f 0 W/2 0 |
//! | 0 f H/2 0 |
//! | 0 0  1  0 |
//! ```
//!
//! followed by division by the third homogeneous coordinate. Camera space is
//! z-forward, x-right, y-down. Pixel coordinates are continuous; pixel `(i, j)`
//! of a grid sits at coordinate `(i, j)`.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// Camera-space depth at or below which a point is classified as behind the camera.
pub const DEPTH_EPSILON: f64 = 1e-9;

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Focal length and image size. The principal point is always `(W/2, H/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    focal: f64,
    width: u32,
    height: u32,
}

impl CameraIntrinsics {
    pub fn new(focal: f64, width: u32, height: u32) -> Result<Self> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(Error::invalid(format!("focal length must be positive, got {focal}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { focal, width, height })
    }

    /// Intrinsics with the given horizontal field of view in radians.
    pub fn from_horizontal_fov(fov: f64, width: u32, height: u32) -> Result<Self> {
        if !(fov > 0.0 && fov < std::f64::consts::PI) {
            return Err(Error::invalid(format!("field of view must be in (0, pi), got {fov}")));
        }
        Self::new(width as f64 / 2.0 / (fov / 2.0).tan(), width, height)
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// The 3×4 intrinsic matrix.
    pub fn matrix(&self) -> Matrix3x4<f64> {
        let (cx, cy) = self.principal_point();
        let f = self.focal;
        #[rustfmt::skip]
        let m = Matrix3x4::new(
            f,   0.0, cx,  0.0,
            0.0, f,   cy,  0.0,
            0.0, 0.0, 1.0, 0.0,
        );
        m
    }

    /// Whether a continuous pixel coordinate lies inside `[0, W) × [0, H)`.
    pub fn contains(&self, pixel: PixelPoint) -> bool {
        pixel.x >= 0.0 && pixel.x < self.width as f64 && pixel.y >= 0.0 && pixel.y < self.height as f64
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraExtrinsics {
    /// Builds extrinsics, rejecting rotations that are not proper and orthonormal within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("extrinsics".into()));
        }
        let gram = rotation.transpose() * rotation;
        let identity = Matrix3::<f64>::identity();
        if gram
            .iter()
            .zip(identity.iter())
            .any(|(a, b)| (a - b).abs() > ORTHONORMAL_TOLERANCE)
        {
            return Err(Error::invalid("rotation is not orthonormal"));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOLERANCE {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Extrinsics for a level camera at `position` in a z-up world frame, looking
    /// along `heading` (radians, counter-clockwise from +X) in the ground plane.
    pub fn from_ground_pose(position: Vector3<f64>, heading: f64) -> Result<Self> {
        let (s, c) = heading.sin_cos();
        // rows: camera right, camera down, camera forward, in world coordinates
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            s,   -c,  0.0,
            0.0, 0.0, -1.0,
            c,   s,   0.0,
        );
        let translation = -(rotation * position);
        Self::new(rotation, translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// The 4×4 homogeneous extrinsic matrix.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn to_camera(&self, p: WorldPoint) -> Vector3<f64> {
        self.rotation * p.0 + self.translation
    }
}

/// A finite point in world coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint(Vector3<f64>);

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::NonFinite(format!("world point ({x}, {y}, {z})")));
        }
        Ok(Self(Vector3::new(x, y, z)))
    }

    pub fn from_vector(v: Vector3<f64>) -> Result<Self> {
        Self::new(v.x, v.y, v.z)
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn coords(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Continuous pixel coordinates, possibly outside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProjectionStatus {
    InFrame,
    OutOfView,
    BehindCamera,
}

/// Result of projecting a single world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    InFrame(PixelPoint),
    OutOfView(PixelPoint),
    BehindCamera,
}

impl Projection {
    pub fn status(&self) -> ProjectionStatus {
        match self {
            Projection::InFrame(_) => ProjectionStatus::InFrame,
            Projection::OutOfView(_) => ProjectionStatus::OutOfView,
            Projection::BehindCamera => ProjectionStatus::BehindCamera,
        }
    }

    pub fn pixel(&self) -> Option<PixelPoint> {
        match *self {
            Projection::InFrame(p) | Projection::OutOfView(p) => Some(p),
            Projection::BehindCamera => None,
        }
    }

    pub fn in_frame(&self) -> Option<PixelPoint> {
        match *self {
            Projection::InFrame(p) => Some(p),
            _ => None,
        }
    }
}

/// Projects a world point into the image of the given camera.
pub fn forward_project(p: WorldPoint, ext: &CameraExtrinsics, intr: &CameraIntrinsics) -> Projection {
    project_camera_point(&ext.to_camera(p), intr)
}

/// Projects a point already expressed in camera coordinates.
pub fn project_camera_point(c: &Vector3<f64>, intr: &CameraIntrinsics) -> Projection {
    if c.z <= DEPTH_EPSILON {
        return Projection::BehindCamera;
    }
    let (cx, cy) = intr.principal_point();
    let pixel = PixelPoint {
        x: intr.focal * c.x / c.z + cx,
        y: intr.focal * c.y / c.z + cy,
    };
    if intr.contains(pixel) {
        Projection::InFrame(pixel)
    } else {
        Projection::OutOfView(pixel)
    }
}

/// The combined 3×4 projection matrix `M_int · M_ext`.
pub fn compose_projection_matrix(ext: &CameraExtrinsics, intr: &CameraIntrinsics) -> Matrix3x4<f64> {
    intr.matrix() * ext.matrix()
}

/// Applies a 3×4 projection matrix to a world point and divides by the third
/// coordinate. Returns `None` when that coordinate is not positive.
pub fn apply_projection_matrix(m: &Matrix3x4<f64>, p: WorldPoint) -> Option<PixelPoint> {
    let h = m * Vector4::new(p.x(), p.y(), p.z(), 1.0);
    (h.z > DEPTH_EPSILON).then(|| PixelPoint {
        x: h.x / h.z,
        y: h.y / h.z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr(f: f64, w: u32, h: u32) -> CameraIntrinsics {
        CameraIntrinsics::new(f, w, h).unwrap()
    }

    fn wp(x: f64, y: f64, z: f64) -> WorldPoint {
        WorldPoint::new(x, y, z).unwrap()
    }

    /// Explicit homogeneous pipeline built from plain arrays.
    fn oracle_project(rot: &[[f64; 3]; 3], t: &[f64; 3], f: f64, w: f64, h: f64, p: [f64; 3]) -> (f64, f64) {
        let m_int = [[f, 0.0, w / 2.0, 0.0], [0.0, f, h / 2.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let mut m_ext = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m_ext[i][j] = rot[i][j];
            }
            m_ext[i][3] = t[i];
        }
        m_ext[3][3] = 1.0;
        let hom = [p[0], p[1], p[2], 1.0];
        let mut cam = [0.0; 4];
        for i in 0..4 {
            for k in 0..4 {
                cam[i] += m_ext[i][k] * hom[k];
            }
        }
        let mut pix = [0.0; 3];
        for i in 0..3 {
            for k in 0..4 {
                pix[i] += m_int[i][k] * cam[k];
            }
        }
        (pix[0] / pix[2], pix[1] / pix[2])
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let r = forward_project(wp(0.0, 0.0, 5.0), &CameraExtrinsics::identity(), &intr(37.0, 200, 100));
        assert_eq!(r, Projection::InFrame(PixelPoint { x: 100.0, y: 50.0 }));
    }

    #[test]
    fn direct_substitution() {
        let r = forward_project(wp(1.0, 0.0, 2.0), &CameraExtrinsics::identity(), &intr(100.0, 200, 100));
        assert_eq!(r, Projection::InFrame(PixelPoint { x: 150.0, y: 50.0 }));
    }

    #[test]
    fn rotated_pose_matches_matrix_oracle() {
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2);
        let t = Vector3::new(1.0, 2.0, 3.0);
        let ext = CameraExtrinsics::new(*rot.matrix(), t).unwrap();
        let k = intr(80.0, 160, 120);
        let arr: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| rot.matrix()[(i, j)]));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 200 {
            let p = wp(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
            let Some(px) = forward_project(p, &ext, &k).pixel() else {
                continue;
            };
            let (ox, oy) = oracle_project(&arr, &[1.0, 2.0, 3.0], 80.0, 160.0, 120.0, [p.x(), p.y(), p.z()]);
            assert!(rel_close(px.x, ox, 1e-9) && rel_close(px.y, oy, 1e-9));
            checked += 1;
        }
    }

    #[test]
    fn identity_composition_is_intrinsic_matrix() {
        let k = intr(50.0, 64, 48);
        let m = compose_projection_matrix(&CameraExtrinsics::identity(), &k);
        assert_eq!(m, k.matrix());
        let px = apply_projection_matrix(&m, wp(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((px.x, px.y), (32.0, 24.0));
    }

    #[test]
    fn composed_matrix_agrees_with_forward_project() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = intr(64.0, 128, 96);
        let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let ext = CameraExtrinsics::new(*rot.matrix(), Vector3::new(-0.5, 4.0, 2.5)).unwrap();
        let m = compose_projection_matrix(&ext, &k);
        let mut n = 0;
        while n < 1000 {
            let p = wp(
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
            );
            let Some(a) = forward_project(p, &ext, &k).pixel() else {
                continue;
            };
            let b = apply_projection_matrix(&m, p).unwrap();
            assert!(rel_close(a.x, b.x, 1e-9) && rel_close(a.y, b.y, 1e-9));
            n += 1;
        }
    }

    #[test]
    fn behind_and_out_of_view() {
        let k = intr(100.0, 200, 100);
        let id = CameraExtrinsics::identity();
        assert_eq!(forward_project(wp(0.0, 0.0, -1.0), &id, &k), Projection::BehindCamera);
        assert_eq!(forward_project(wp(0.0, 0.0, 0.0), &id, &k), Projection::BehindCamera);
        let r = forward_project(wp(5.0, 0.0, 1.0), &id, &k);
        assert_eq!(r.status(), ProjectionStatus::OutOfView);
        assert_eq!(r.pixel().unwrap().x, 600.0);
        // right and bottom edges are exclusive
        let edge = forward_project(wp(1.0, 0.0, 1.0), &id, &k);
        assert_eq!(edge.status(), ProjectionStatus::OutOfView);
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(CameraIntrinsics::new(0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 0, 10).is_err());
        assert!(WorldPoint::new(f64::NAN, 0.0, 0.0).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraExtrinsics::new(reflect, Vector3::zeros()).is_err());
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraExtrinsics::new(skew, Vector3::zeros()).is_err());
    }

    #[test]
    fn ground_pose_looks_along_heading() {
        let k = intr(32.0, 64, 64);
        let pos = Vector3::new(3.0, -2.0, 1.5);
        let heading = 0.7;
        let ext = CameraExtrinsics::from_ground_pose(pos, heading).unwrap();
        assert!((ext.center() - pos).norm() < 1e-12);
        let ahead = pos + Vector3::new(heading.cos(), heading.sin(), 0.0) * 10.0;
        let px = forward_project(WorldPoint::from_vector(ahead).unwrap(), &ext, &k)
            .in_frame()
            .unwrap();
        assert!((px.x - 32.0).abs() < 1e-9 && (px.y - 32.0).abs() < 1e-9);
        // a point on the ground ahead is below the horizon, a point to the left is left of center
        let ground = pos + Vector3::new(heading.cos(), heading.sin(), 0.0) * 10.0 - Vector3::new(0.0, 0.0, 1.5);
        assert!(
            forward_project(WorldPoint::from_vector(ground).unwrap(), &ext, &k)
                .pixel()
                .unwrap()
                .y
                > 32.0
        );
        let left = ahead + Vector3::new(-heading.sin(), heading.cos(), 0.0) * 2.0;
        assert!(
            forward_project(WorldPoint::from_vector(left).unwrap(), &ext, &k)
                .pixel()
                .unwrap()
                .x
                < 32.0
        );
    }

    proptest! {
        #[test]
        fn projection_is_scale_invariant_along_ray(
            x in -5.0f64..5.0, y in -5.0f64..5.0, z in 0.1f64..50.0, s in 0.01f64..100.0,
        ) {
            let k = intr(90.0, 320, 240);
            let id = CameraExtrinsics::identity();
            let a = forward_project(wp(x, y, z), &id, &k).pixel().unwrap();
            let b = forward_project(wp(x * s, y * s, z * s), &id, &k).pixel().unwrap();
            prop_assert!(rel_close(a.x, b.x, 1e-9) && rel_close(a.y, b.y, 1e-9));
        }

        #[test]
        fn status_trichotomy(x in -1e3f64..1e3, y in -1e3f64..1e3, z in -1e3f64..1e3) {
            let k = intr(90.0, 320, 240);
            let r = forward_project(wp(x, y, z), &CameraExtrinsics::identity(), &k);
            match r {
                Projection::BehindCamera => prop_assert!(z <= DEPTH_EPSILON),
                Projection::InFrame(p) => prop_assert!(z > DEPTH_EPSILON && k.contains(p)),
                Projection::OutOfView(p) => prop_assert!(z > DEPTH_EPSILON && !k.contains(p)),
            }
        }
    }
}
