use crate::imaging::{to_grayscale, GrayImage, Image};
use crate::Result;

use super::PointPrompt;

/// Number of per-pixel feature channels.
pub const NUM_FEATURES: usize = 6;
/// Channels that depend only on the image (the rest come from prompts).
pub const IMAGE_FEATURES: usize = 4;

const SOBEL_MAX: f64 = 4.0 * 255.0 * std::f64::consts::SQRT_2;

/// Per-pixel features, pixel-major: `data[p * NUM_FEATURES + k]`.
///
/// Channels: intensity, 5×5 mean, 5×5 standard deviation, Sobel magnitude,
/// and `exp(-d/τ)` distance fields to the nearest positive and negative
/// prompts (τ = 0.1 × image diagonal). Every value lies in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FeatureStack {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, p: usize) -> &[f32] {
        &self.data[p * NUM_FEATURES..(p + 1) * NUM_FEATURES]
    }

    pub fn channel(&self, k: usize) -> Vec<f32> {
        self.data.iter().skip(k).step_by(NUM_FEATURES).copied().collect()
    }

    /// Mean of every channel over all pixels.
    pub fn channel_means(&self) -> [f64; NUM_FEATURES] {
        let mut acc = [0.0f64; NUM_FEATURES];
        for px in self.data.chunks_exact(NUM_FEATURES) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v as f64;
            }
        }
        let n = self.pixels() as f64;
        acc.map(|a| a / n)
    }
}

/// The prompt-independent channels of an image, computed once and reused
/// for every prompt set.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseFeatures {
    pub width: usize,
    pub height: usize,
    data: Vec<[f32; IMAGE_FEATURES]>,
}

impl BaseFeatures {
    pub fn from_gray(g: &GrayImage) -> Self {
        let (w, h) = (g.width(), g.height());
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (xi, yi) = (x as isize, y as isize);
                let (mut s, mut s2) = (0i64, 0i64);
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        let v = g.get_reflect(xi + dx, yi + dy) as i64;
                        s += v;
                        s2 += v * v;
                    }
                }
                let mean = s as f64 / 25.0;
                let var = (25 * s2 - s * s) as f64 / 625.0;
                let std = var.max(0.0).sqrt();

                let p = |dx: isize, dy: isize| g.get_reflect(xi + dx, yi + dy) as f64;
                let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
                let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
                let mag = (gx * gx + gy * gy).sqrt() / SOBEL_MAX;

                data.push([
                    (g.get(x, y) as f64 / 255.0) as f32,
                    (mean / 255.0) as f32,
                    (std / 127.5).min(1.0) as f32,
                    mag.min(1.0) as f32,
                ]);
            }
        }
        Self { width: w, height: h, data }
    }

    pub fn from_image(img: &Image) -> Result<Self> {
        Ok(Self::from_gray(&to_grayscale(img)?))
    }

    pub fn pixel(&self, p: usize) -> &[f32; IMAGE_FEATURES] {
        &self.data[p]
    }

    pub fn tau(&self) -> f64 {
        0.1 * ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    /// Full feature stack for the given prompts.
    pub fn with_prompts(&self, prompts: &[PointPrompt]) -> FeatureStack {
        let tau = self.tau();
        let pos: Vec<_> = prompts.iter().filter(|p| p.is_positive()).collect();
        let neg: Vec<_> = prompts.iter().filter(|p| !p.is_positive()).collect();
        let field = |x: usize, y: usize, set: &[&PointPrompt]| -> f32 {
            set.iter()
                .map(|p| {
                    let dx = x as f64 - p.x as f64;
                    let dy = y as f64 - p.y as f64;
                    dx * dx + dy * dy
                })
                .min_by(f64::total_cmp)
                .map_or(0.0, |d2| (-d2.sqrt() / tau).exp() as f32)
        };
        let mut data = Vec::with_capacity(self.data.len() * NUM_FEATURES);
        for (i, base) in self.data.iter().enumerate() {
            let (x, y) = (i % self.width, i / self.width);
            data.extend_from_slice(base);
            data.push(field(x, y, &pos));
            data.push(field(x, y, &neg));
        }
        FeatureStack {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

pub fn extract_features(img: &Image, prompts: &[PointPrompt]) -> Result<FeatureStack> {
    Ok(BaseFeatures::from_image(img)?.with_prompts(prompts))
}
