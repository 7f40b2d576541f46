//! Attention masking of camera images.
//!
//! Maps are peak-normalized (maximum 1) before they touch an image, so the
//! attended region keeps its full brightness:
//!
//! * hard: `I ⊙ F`
//! * soft: `λ·I + (1 − λ)·I ⊙ F`
//! * baseline: `I ⊙ G`, with `G` the dataset mean fixation map

use std::fmt;
use std::str::FromStr;

use crate::attention::{peak_normalize, AttentionMap};
use crate::error::{Error, Result};

/// Interleaved (row-major, channel-last) image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image values must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: &[f64]) -> Result<Self> {
        let data = color
            .iter()
            .copied()
            .cycle()
            .take(width * height * color.len())
            .collect();
        Self::new(width, height, color.len(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Single-channel image holding channel `c`.
    pub fn channel(&self, c: usize) -> Result<Image> {
        if c >= self.channels {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: self.channels,
            });
        }
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image::new(self.width, self.height, 1, data)
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Image> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(Error::invalid(format!(
                "cannot downsample {}x{} by {factor}",
                self.width, self.height
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (w, h, c) = (self.width / factor, self.height / factor, self.channels);
        let mut data = vec![0.0; w * h * c];
        let norm = 1.0 / (factor * factor) as f64;
        for y in 0..self.height {
            for x in 0..self.width {
                let o = ((y / factor) * w + x / factor) * c;
                let i = (y * self.width + x) * c;
                for k in 0..c {
                    data[o + k] += self.data[i + k] * norm;
                }
            }
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Image::new(w, h, c, data)
    }

    /// Sum of all pixel values over all channels.
    pub fn energy(&self) -> f64 {
        self.data.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    lambda: f64,
}

impl MaskConfig {
    pub const DEFAULT_LAMBDA: f64 = 0.3;

    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            lambda: Self::DEFAULT_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskMode {
    Hard,
    Soft,
    Baseline,
}

impl MaskMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskMode::Hard => "hard",
            MaskMode::Soft => "soft",
            MaskMode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(MaskMode::Hard),
            "soft" => Ok(MaskMode::Soft),
            "baseline" => Ok(MaskMode::Baseline),
            other => Err(Error::invalid(format!("unknown mask mode '{other}'"))),
        }
    }
}

fn blend(img: &Image, map: &AttentionMap, lambda: f64) -> Result<Image> {
    if (img.width, img.height) != map.dims() {
        return Err(Error::dims(map.dims(), (img.width, img.height)));
    }
    let weights = peak_normalize(map)?;
    let c = img.channels;
    let mut data = Vec::with_capacity(img.data.len());
    for (px, w) in img.data.chunks_exact(c).zip(&weights) {
        for v in px {
            let out = if lambda == 0.0 {
                v * w
            } else {
                lambda * v + (1.0 - lambda) * (v * w)
            };
            data.push(out.clamp(0.0, *v));
        }
    }
    Ok(Image {
        width: img.width,
        height: img.height,
        channels: c,
        data,
    })
}

/// `I ⊙ F`: blacks out everything the map does not attend to.
pub fn hard_mask(img: &Image, map: &AttentionMap) -> Result<Image> {
    blend(img, map, 0.0)
}

/// `λ·I + (1 − λ)·I ⊙ F`: dims unattended regions by the factor λ.
pub fn soft_mask(img: &Image, map: &AttentionMap, cfg: &MaskConfig) -> Result<Image> {
    blend(img, map, cfg.lambda)
}

/// `I ⊙ G` with the dataset mean fixation map.
pub fn baseline_mask(img: &Image, mean_map: &AttentionMap) -> Result<Image> {
    blend(img, mean_map, 0.0)
}

pub fn apply_mask(img: &Image, map: &AttentionMap, mode: MaskMode, cfg: &MaskConfig) -> Result<Image> {
    match mode {
        MaskMode::Hard => hard_mask(img, map),
        MaskMode::Soft => soft_mask(img, map, cfg),
        MaskMode::Baseline => baseline_mask(img, map),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::fuse_fixations;
    use crate::geometry::PixelPoint;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn gaussian(w: usize, h: usize, cx: f64, cy: f64, sigma: f64) -> AttentionMap {
        AttentionMap::from_weights(w, h, fuse_fixations(&[PixelPoint { x: cx, y: cy }], w, h, sigma)).unwrap()
    }

    #[test]
    fn uniform_map_is_identity() {
        let img = random_image(12, 9, 3, 1);
        let u = AttentionMap::uniform(12, 9);
        assert_eq!(hard_mask(&img, &u).unwrap(), img);
        assert_eq!(baseline_mask(&img, &u).unwrap(), img);
        for lambda in [0.0, 0.3, 0.9] {
            let out = soft_mask(&img, &u, &MaskConfig::new(lambda).unwrap()).unwrap();
            assert!(out.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() <= 1e-15));
        }
    }

    #[test]
    fn far_tail_is_suppressed() {
        let img = Image::filled(40, 40, &[1.0, 1.0, 1.0]).unwrap();
        let m = gaussian(40, 40, 5.0, 5.0, 1.0);
        let out = hard_mask(&img, &m).unwrap();
        assert!(out.pixel(35, 35).iter().all(|v| *v < 1e-6));
        assert!(out.pixel(5, 5).iter().all(|v| *v == 1.0));
        let soft = soft_mask(&img, &m, &MaskConfig::new(0.3).unwrap()).unwrap();
        assert!(soft.pixel(35, 35).iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn hard_mask_energy_matches_loop_oracle() {
        let img = random_image(20, 16, 3, 2);
        let m = gaussian(20, 16, 7.3, 9.1, 3.0);
        let out = hard_mask(&img, &m).unwrap();
        let peak = m.values().iter().copied().fold(0.0, f64::max);
        let mut expected = 0.0;
        for y in 0..16 {
            for x in 0..20 {
                for c in 0..3 {
                    expected += img.pixel(x, y)[c] * m.get(x, y) / peak;
                }
            }
        }
        assert!(out.energy() <= img.energy());
        assert!((out.energy() / img.energy() - expected / img.energy()).abs() < 1e-9);
    }

    #[test]
    fn soft_mask_limits() {
        let img = random_image(16, 16, 3, 3);
        let m = gaussian(16, 16, 8.0, 8.0, 2.0);
        let zero = soft_mask(&img, &m, &MaskConfig::new(0.0).unwrap()).unwrap();
        assert_eq!(zero, hard_mask(&img, &m).unwrap());
        let one = soft_mask(&img, &m, &MaskConfig::new(1.0).unwrap()).unwrap();
        assert_eq!(one, img);
    }

    #[test]
    fn baseline_equals_hard_with_mean_map() {
        let img = random_image(16, 12, 3, 4);
        let g = gaussian(16, 12, 8.0, 6.0, 4.0);
        assert_eq!(baseline_mask(&img, &g).unwrap(), hard_mask(&img, &g).unwrap());
    }

    #[test]
    fn center_biased_baseline_attenuates_periphery() {
        let maps: Vec<_> = (0..20)
            .map(|i| gaussian(32, 32, 16.0 + (i % 5) as f64 - 2.0, 16.0 + (i % 3) as f64 - 1.0, 3.0))
            .collect();
        let g = crate::attention::mean_fixation_map(&maps).unwrap();
        let img = Image::filled(32, 32, &[0.8]).unwrap();
        let out = baseline_mask(&img, &g).unwrap();
        let peak = g.values().iter().copied().fold(0.0, f64::max);
        let ratio = |x: usize, y: usize| out.pixel(x, y)[0] / img.pixel(x, y)[0];
        for (x, y) in [(16, 16), (2, 2), (30, 16), (16, 31)] {
            assert!((ratio(x, y) - g.get(x, y) / peak).abs() < 1e-12);
        }
        assert!(ratio(16, 16) > ratio(2, 2));
        assert!(ratio(16, 16) > ratio(30, 16));
    }

    #[test]
    fn errors() {
        let img = random_image(8, 8, 3, 5);
        assert!(matches!(
            hard_mask(&img, &AttentionMap::uniform(8, 7)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            hard_mask(&img, &AttentionMap::empty(8, 8)),
            Err(Error::EmptyMap)
        ));
        assert!(MaskConfig::new(1.5).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0, 0.5, 1.0, 1.2]).is_err());
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = Image::new(2, 2, 1, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        assert_eq!(img.downsample(2).unwrap().data(), &[0.5]);
        assert!(img.downsample(3).is_err());
    }

    proptest! {
        #[test]
        fn masks_are_contractions(seed in 0u64..1000, lambda in 0.0f64..=1.0, cx in 0.0f64..24.0, cy in 0.0f64..18.0) {
            let img = random_image(24, 18, 3, seed);
            let m = gaussian(24, 18, cx, cy, 3.0);
            let cfg = MaskConfig::new(lambda).unwrap();
            for mode in [MaskMode::Hard, MaskMode::Soft, MaskMode::Baseline] {
                let out = apply_mask(&img, &m, mode, &cfg).unwrap();
                prop_assert!(out.data().iter().zip(img.data()).all(|(o, i)| *o >= 0.0 && o <= i));
            }
        }

        #[test]
        fn masking_commutes_with_channel_slicing(seed in 0u64..1000, lambda in 0.0f64..=1.0) {
            let img = random_image(10, 10, 3, seed);
            let m = gaussian(10, 10, 4.0, 6.0, 2.0);
            let cfg = MaskConfig::new(lambda).unwrap();
            let full = soft_mask(&img, &m, &cfg).unwrap();
            for c in 0..3 {
                prop_assert_eq!(soft_mask(&img.channel(c).unwrap(), &m, &cfg).unwrap(), full.channel(c).unwrap());
            }
        }
    }
}
