//! Densely sampled road centreline on the ground plane.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::WorldPoint;

/// Ground-plane polyline parameterized by arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadPath {
    points: Vec<Vector2<f64>>,
    arc: Vec<f64>,
}

impl RoadPath {
    pub fn new(points: Vec<Vector2<f64>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a road path needs at least two vertices"));
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for w in points.windows(2) {
            let d = (w[1] - w[0]).norm();
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::invalid("road path vertices must be distinct and finite"));
            }
            arc.push(arc.last().copied().unwrap_or(0.0) + d);
        }
        Ok(Self { points, arc })
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().expect("at least two vertices")
    }

    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.points
    }

    /// Vertices lifted to the ground plane.
    pub fn world_points(&self) -> Vec<WorldPoint> {
        self.points
            .iter()
            .map(|p| WorldPoint::new(p.x, p.y, 0.0).expect("finite vertices"))
            .collect()
    }

    fn segment_at(&self, s: f64) -> usize {
        let s = s.clamp(0.0, self.length());
        match self.arc.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => (i - 1).min(self.points.len() - 2),
        }
    }

    /// Point at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Vector2<f64> {
        let i = self.segment_at(s);
        let s = s.clamp(0.0, self.length());
        let t = (s - self.arc[i]) / (self.arc[i + 1] - self.arc[i]);
        self.points[i] + (self.points[i + 1] - self.points[i]) * t
    }

    /// Unit direction of travel at arc length `s`.
    pub fn tangent_at(&self, s: f64) -> Vector2<f64> {
        let i = self.segment_at(s);
        (self.points[i + 1] - self.points[i]).normalize()
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let t = self.tangent_at(s);
        t.y.atan2(t.x)
    }

    /// Closest point on the path among segments overlapping `[lo, hi]` in arc
    /// length. Returns `(arc length, distance)`.
    pub fn nearest_in(&self, p: Vector2<f64>, lo: f64, hi: f64) -> (f64, f64) {
        let first = self.segment_at(lo);
        let last = self.segment_at(hi);
        let mut best = (0.0, f64::INFINITY);
        for i in first..=last {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            let d = (a + ab * t - p).norm();
            if d < best.1 {
                best = (self.arc[i] + t * (self.arc[i + 1] - self.arc[i]), d);
            }
        }
        best
    }

    pub fn nearest(&self, p: Vector2<f64>) -> (f64, f64) {
        self.nearest_in(p, 0.0, self.length())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_length_queries() {
        let path = RoadPath::new(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(3.0, 0.0),
            Vector2::new(3.0, 4.0),
        ])
        .unwrap();
        assert_eq!(path.length(), 7.0);
        assert_eq!(path.point_at(5.0), Vector2::new(3.0, 2.0));
        assert_eq!(path.point_at(-1.0), Vector2::new(0.0, 0.0));
        assert_eq!(path.point_at(9.0), Vector2::new(3.0, 4.0));
        assert!((path.heading_at(4.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let (s, d) = path.nearest(Vector2::new(4.0, 1.0));
        assert!((s - 4.0).abs() < 1e-12 && (d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_paths_are_rejected() {
        assert!(RoadPath::new(vec![Vector2::new(0.0, 0.0)]).is_err());
        assert!(RoadPath::new(vec![Vector2::new(0.0, 0.0), Vector2::new(0.0, 0.0)]).is_err());
    }
}
