use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::SamplePair;
use crate::imaging::{BinaryMask, Image};
use crate::{Error, Result};

pub const LOW_NOISE_SOURCE: &str = "synth-low";
pub const HIGH_NOISE_SOURCE: &str = "synth-high";

const MIN_FOAM: f64 = 0.05;
const MAX_FOAM: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Standard deviation of the additive sensor noise, in grey levels.
    pub noise_sigma: f64,
    pub source_id: String,
    pub name_prefix: String,
}

impl SynthConfig {
    pub fn low_noise() -> Self {
        Self {
            noise_sigma: 4.0,
            source_id: LOW_NOISE_SOURCE.into(),
            name_prefix: "low".into(),
        }
    }

    pub fn high_noise() -> Self {
        Self {
            noise_sigma: 16.0,
            source_id: HIGH_NOISE_SOURCE.into(),
            name_prefix: "high".into(),
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::low_noise()
    }
}

/// `n` low-noise samples. See [`synth_generate_with`].
pub fn synth_generate(n: usize, size: (usize, usize), seed: u64) -> Result<Vec<SamplePair>> {
    synth_generate_with(n, size, seed, &SynthConfig::default())
}

/// Dark water with low-frequency shading, overlaid with bright speckled
/// foam made of random ellipses. The mask is exactly the ellipse union and
/// covers between 5% and 50% of the frame. Sample `i` depends only on
/// `(seed, i)`, so growing `n` keeps the earlier samples.
pub fn synth_generate_with(n: usize, size: (usize, usize), seed: u64, cfg: &SynthConfig) -> Result<Vec<SamplePair>> {
    let (w, h) = size;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if w < 8 || h < 8 {
        return Err(Error::InvalidArgument(format!("synthetic size {w}x{h} is below 8x8")));
    }
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument("noise sigma must be >= 0".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let (image, mask) = one_sample(w, h, cfg.noise_sigma, &mut rng);
            SamplePair::new(image, mask, cfg.source_id.clone(), format!("{}_{:05}", cfg.name_prefix, i))
        })
        .collect()
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    sin: f64,
    cos: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

fn foam_mask(w: usize, h: usize, rng: &mut ChaCha8Rng) -> BinaryMask {
    let side = w.min(h) as f64;
    loop {
        let k = rng.random_range(2..=6);
        let blobs: Vec<Ellipse> = (0..k)
            .map(|_| {
                let (sin, cos) = rng.random_range(0.0..std::f64::consts::PI).sin_cos();
                Ellipse {
                    cx: rng.random_range(0.1..0.9) * w as f64,
                    cy: rng.random_range(0.1..0.9) * h as f64,
                    a: rng.random_range(0.06..0.2) * side,
                    b: rng.random_range(0.06..0.2) * side,
                    sin,
                    cos,
                }
            })
            .collect();
        let mask = BinaryMask::from_fn(w, h, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            blobs.iter().any(|e| e.contains(px, py))
        });
        let frac = mask.count() as f64 / mask.len() as f64;
        if (MIN_FOAM..=MAX_FOAM).contains(&frac) {
            return mask;
        }
    }
}

fn one_sample(w: usize, h: usize, sigma: f64, rng: &mut ChaCha8Rng) -> (Image, BinaryMask) {
    let mask = foam_mask(w, h, rng);

    // 5×5 lattice of water levels, bilinearly interpolated, plus a ripple.
    const G: usize = 5;
    let lattice: Vec<f64> = (0..G * G).map(|_| rng.random_range(25.0..85.0)).collect();
    let ripple_amp = rng.random_range(2.0..6.0);
    let (fx, fy) = (rng.random_range(1.0..4.0) / w as f64, rng.random_range(1.0..4.0) / h as f64);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let water = |x: usize, y: usize| {
        let gx = x as f64 / (w - 1) as f64 * (G - 1) as f64;
        let gy = y as f64 / (h - 1) as f64 * (G - 1) as f64;
        let (x0, y0) = ((gx.floor() as usize).min(G - 2), (gy.floor() as usize).min(G - 2));
        let (tx, ty) = (gx - x0 as f64, gy - y0 as f64);
        let l = |i: usize, j: usize| lattice[j * G + i];
        let top = l(x0, y0) * (1.0 - tx) + l(x0 + 1, y0) * tx;
        let bot = l(x0, y0 + 1) * (1.0 - tx) + l(x0 + 1, y0 + 1) * tx;
        let ripple = ripple_amp * (std::f64::consts::TAU * (x as f64 * fx + y as f64 * fy) + phase).sin();
        top * (1.0 - ty) + bot * ty + ripple
    };

    let foam_level = rng.random_range(185.0..215.0);
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let base = if mask.get(x, y) {
                foam_level + rng.random_range(-30.0..30.0)
            } else {
                water(x, y)
            };
            let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            let v = base + n;
            let px = if mask.get(x, y) {
                [v, v, v * 0.97]
            } else {
                [v * 0.85, v, v * 0.92]
            };
            data.extend(px.map(|c| c.round().clamp(0.0, 255.0) as u8));
        }
    }
    (Image::new(w, h, 3, data).expect("rgb buffer"), mask)
}

/// Training corpus for the two-source federated experiment: the first half
/// is low-noise, the second high-noise. The held-out set alternates the two
/// sources and never shares a sample with the training set.
pub fn simulation_corpus(n_train: usize, n_holdout: usize, size: (usize, usize), seed: u64) -> Result<(Vec<SamplePair>, Vec<SamplePair>)> {
    let n_low = n_train.div_ceil(2);
    let n_high = n_train - n_low;
    let mut train = synth_generate_with(n_low.max(1), size, seed, &SynthConfig::low_noise())?;
    train.truncate(n_low);
    if n_high > 0 {
        train.extend(synth_generate_with(n_high, size, seed ^ 0x4849_4748, &SynthConfig::high_noise())?);
    }
    let mut holdout = Vec::with_capacity(n_holdout);
    if n_holdout > 0 {
        let held_seed = seed ^ 0x484f_4c44_4f55_54;
        let low = synth_generate_with(n_holdout.div_ceil(2), size, held_seed, &SynthConfig::low_noise())?;
        let high = synth_generate_with(n_holdout.div_ceil(2), size, held_seed ^ 1, &SynthConfig::high_noise())?;
        for (a, b) in low.into_iter().zip(high) {
            holdout.push(SamplePair { name: format!("held_{}", a.name), ..a });
            holdout.push(SamplePair { name: format!("held_{}", b.name), ..b });
        }
        holdout.truncate(n_holdout);
    }
    Ok((train, holdout))
}
