//! Fixation maps built from windows of projected gaze points.
//!
//! Every in-frame fixation contributes a unit-peak isotropic Gaussian; the
//! contributions are fused with a pointwise max and the grid is normalized to
//! a probability distribution.

use crate::error::{Error, Result};
use crate::geometry::{forward_project, CameraExtrinsics, CameraIntrinsics, PixelPoint, WorldPoint};

/// Gaussians are cut off beyond this many standard deviations.
pub const TRUNCATION_SIGMAS: f64 = 4.0;

#[cfg(test)]
const SUM_TOLERANCE: f64 = 1e-6;

/// A W×H probability grid over pixels, row-major, or an empty (all-zero) map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    empty: bool,
}

impl AttentionMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            empty: true,
        }
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            values: vec![1.0 / n as f64; n],
            empty: false,
        }
    }

    /// Normalizes non-negative weights into a map. All-zero weights give an empty map.
    pub fn from_weights(width: usize, height: usize, mut values: Vec<f64>) -> Result<Self> {
        check_len(width, height, values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("map weights must be finite and non-negative"));
        }
        let total: f64 = values.iter().sum();
        if total == 0.0 {
            return Ok(Self::empty(width, height));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(Self {
            width,
            height,
            values,
            empty: false,
        })
    }

    /// Wraps values that already form a distribution (sum 1 within `tolerance`).
    pub fn from_probabilities(width: usize, height: usize, values: Vec<f64>, tolerance: f64) -> Result<Self> {
        check_len(width, height, values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("map values must be finite and non-negative"));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > tolerance {
            return Err(Error::invalid(format!("map sums to {total}, expected 1")));
        }
        Ok(Self {
            width,
            height,
            values,
            empty: false,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Grid position of the largest value (first in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let i = argmax(&self.values);
        (i % self.width, i / self.width)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Copies out the sub-rectangle and renormalizes it. Returns an empty map
    /// when the window holds no mass.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<AttentionMap> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            out.extend_from_slice(&self.values[y * self.width + x0..y * self.width + x0 + w]);
        }
        AttentionMap::from_weights(w, h, out)
    }

    pub(crate) fn ensure_same_dims(&self, other: &AttentionMap) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("map dimensions must be positive"));
    }
    if width * height != len {
        return Err(Error::invalid(format!(
            "{width}x{height} map needs {} values, got {len}",
            width * height
        )));
    }
    Ok(())
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One gaze sample: the 3D point the driver looked at during a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeRecord {
    pub frame_index: usize,
    pub point: WorldPoint,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    sigma: f64,
    half_window: usize,
}

impl MapConfig {
    pub const DEFAULT_HALF_WINDOW: usize = 12;

    pub fn new(sigma: f64, half_window: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma, half_window })
    }

    /// Default configuration for an image of the given width: sigma = W/20.
    pub fn for_width(width: u32) -> Self {
        Self {
            sigma: width as f64 / 20.0,
            half_window: Self::DEFAULT_HALF_WINDOW,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn half_window(&self) -> usize {
        self.half_window
    }
}

/// Valid gaze points within `half_window` frames of `t`, in frame order.
/// `records[i]` holds the gaze of frame `i`.
pub fn window_fixations(records: &[GazeRecord], t: usize, cfg: &MapConfig) -> Result<Vec<WorldPoint>> {
    if t >= records.len() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: records.len(),
        });
    }
    let lo = t.saturating_sub(cfg.half_window);
    let hi = (t + cfg.half_window).min(records.len() - 1);
    Ok(records[lo..=hi].iter().filter(|r| r.valid).map(|r| r.point).collect())
}

/// Unnormalized max-fused field of unit-peak Gaussians centered on `centers`.
pub fn fuse_fixations(centers: &[PixelPoint], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let mut grid = vec![0.0; width * height];
    let radius = TRUNCATION_SIGMAS * sigma;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    for c in centers {
        let x0 = (c.x - radius).ceil().max(0.0) as usize;
        let y0 = (c.y - radius).ceil().max(0.0) as usize;
        let x1 = (c.x + radius).floor().min(width as f64 - 1.0);
        let y1 = (c.y + radius).floor().min(height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            let dy = y as f64 - c.y;
            let row = &mut grid[y * width..(y + 1) * width];
            for (x, cell) in row.iter_mut().enumerate().take(x1 as usize + 1).skip(x0) {
                let dx = x as f64 - c.x;
                let d2 = dx * dx + dy * dy;
                if d2 > radius * radius {
                    continue;
                }
                let g = (-d2 * inv_two_var).exp();
                if g > *cell {
                    *cell = g;
                }
            }
        }
    }
    grid
}

/// Projects fixations into the current frame and fuses them into an attention map.
pub fn build_attention_map(
    fixations: &[WorldPoint],
    frame_ext: &CameraExtrinsics,
    intr: &CameraIntrinsics,
    cfg: &MapConfig,
) -> AttentionMap {
    let (w, h) = (intr.width() as usize, intr.height() as usize);
    let centers: Vec<PixelPoint> = fixations
        .iter()
        .filter_map(|p| forward_project(*p, frame_ext, intr).in_frame())
        .collect();
    if centers.is_empty() {
        return AttentionMap::empty(w, h);
    }
    let grid = fuse_fixations(&centers, w, h, cfg.sigma);
    // in-frame centers always cover at least their own pixel with a positive weight
    AttentionMap::from_weights(w, h, grid).expect("fused grid is finite and non-negative")
}

/// Pointwise mean over the non-empty maps, renormalized.
pub fn mean_fixation_map<'a, I>(maps: I) -> Result<AttentionMap>
where
    I: IntoIterator<Item = &'a AttentionMap>,
{
    let mut acc: Option<(usize, usize, Vec<f64>)> = None;
    let mut count = 0usize;
    for m in maps {
        match &mut acc {
            None => acc = Some((m.width, m.height, vec![0.0; m.values.len()])),
            Some((w, h, _)) if (*w, *h) != m.dims() => return Err(Error::dims((*w, *h), m.dims())),
            _ => {}
        }
        if m.empty {
            continue;
        }
        let (_, _, sum) = acc.as_mut().expect("initialized above");
        sum.iter_mut().zip(&m.values).for_each(|(s, v)| *s += v);
        count += 1;
    }
    match acc {
        Some((w, h, mut sum)) if count > 0 => {
            sum.iter_mut().for_each(|s| *s /= count as f64);
            AttentionMap::from_weights(w, h, sum)
        }
        _ => Err(Error::EmptyMap),
    }
}

/// Scales a map so that its maximum is 1.
pub fn peak_normalize(map: &AttentionMap) -> Result<Vec<f64>> {
    if map.empty {
        return Err(Error::EmptyMap);
    }
    let peak = map.values.iter().copied().fold(0.0, f64::max);
    Ok(map.values.iter().map(|v| v / peak).collect())
}
