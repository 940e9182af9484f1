use super::{BinaryMask, GrayImage};
use crate::{Error, Result};

/// Fixed-point scale of the 1-D Gaussian taps.
const TAP_ONE: f64 = 4096.0;

/// Adaptive threshold against a Gaussian-weighted local mean.
///
/// A pixel is foam (1) iff `v > mean_block(v) - c`, where the local mean
/// uses a separable `block × block` Gaussian with
/// `σ = 0.3·((block - 1)/2 - 1) + 0.8` and reflect-101 borders.
pub fn adaptive_threshold_gaussian(g: &GrayImage, block: usize, c: f64) -> Result<BinaryMask> {
    if block < 3 || block % 2 == 0 {
        return Err(Error::InvalidArgument(format!("block size must be odd and >= 3, got {block}")));
    }
    let taps = gaussian_taps(block);
    let total: u64 = taps.iter().sum::<u64>().pow(2);
    let r = (block / 2) as isize;
    let (w, h) = (g.width(), g.height());

    // Horizontal pass.
    let mut rows = vec![0u64; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, &t)| t * g.get_reflect(x as isize + k as isize - r, y as isize) as u64)
                .sum();
        }
    }
    let row_at = |x: usize, y: isize| rows[super::reflect101(y, h) * w + x];

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let s: u64 = taps
                .iter()
                .enumerate()
                .map(|(k, &t)| t * row_at(x, y as isize + k as isize - r))
                .sum();
            let mean = s as f64 / total as f64;
            out.push(u8::from(g.get(x, y) as f64 > mean - c));
        }
    }
    BinaryMask::from_raw(w, h, out)
}

pub(crate) fn gaussian_sigma(block: usize) -> f64 {
    0.3 * ((block as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

fn gaussian_taps(block: usize) -> Vec<u64> {
    let sigma = gaussian_sigma(block);
    let c = (block / 2) as f64;
    let raw: Vec<f64> = (0..block)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| ((v / sum) * TAP_ONE).round() as u64).collect()
}
