use super::GrayImage;
use crate::{Error, Result};

const BINS: usize = 256;

/// Contrast-limited adaptive histogram equalization.
///
/// The image is split into `tiles.0 × tiles.1` equal tiles (the image is
/// extended by reflection when its size is not a multiple of the grid).
/// Each tile histogram is clipped at `clip_limit · tile_area / 256`, the
/// clipped excess is spread uniformly over all bins, and the tile's
/// equalization LUT is the scaled cumulative histogram. Output pixels blend
/// the LUTs of the four nearest tile centers bilinearly.
///
/// `clip_limit = f64::INFINITY` disables clipping.
pub fn clahe(g: &GrayImage, clip_limit: f64, tiles: (usize, usize)) -> Result<GrayImage> {
    let (tx, ty) = tiles;
    if tx == 0 || ty == 0 {
        return Err(Error::InvalidArgument("tile grid must be at least 1x1".into()));
    }
    if !(clip_limit > 0.0) {
        return Err(Error::InvalidArgument(format!("clip limit must be positive, got {clip_limit}")));
    }
    let (w, h) = (g.width(), g.height());
    if w < tx || h < ty {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} is smaller than the {tx}x{ty} tile grid"
        )));
    }

    let tile_w = w.div_ceil(tx);
    let tile_h = h.div_ceil(ty);
    let area = tile_w * tile_h;
    let limit = if clip_limit.is_finite() {
        Some(((clip_limit * area as f64 / BINS as f64) as usize).max(1))
    } else {
        None
    };
    let scale = (BINS - 1) as f64 / area as f64;

    let mut luts = vec![[0u8; BINS]; tx * ty];
    for j in 0..ty {
        for i in 0..tx {
            let mut hist = [0usize; BINS];
            for y in j * tile_h..(j + 1) * tile_h {
                for x in i * tile_w..(i + 1) * tile_w {
                    hist[g.get_reflect(x as isize, y as isize) as usize] += 1;
                }
            }
            if let Some(limit) = limit {
                clip_histogram(&mut hist, limit);
            }
            let lut = &mut luts[j * tx + i];
            let mut cdf = 0usize;
            for (v, &count) in hist.iter().enumerate() {
                cdf += count;
                lut[v] = (cdf as f64 * scale).round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    let inv_tw = 1.0 / tile_w as f64;
    let inv_th = 1.0 / tile_h as f64;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let tyf = y as f64 * inv_th - 0.5;
        let ty1f = tyf.floor();
        let ya = tyf - ty1f;
        let ty1 = clamp_tile(ty1f as isize, ty);
        let ty2 = clamp_tile(ty1f as isize + 1, ty);
        for x in 0..w {
            let txf = x as f64 * inv_tw - 0.5;
            let tx1f = txf.floor();
            let xa = txf - tx1f;
            let tx1 = clamp_tile(tx1f as isize, tx);
            let tx2 = clamp_tile(tx1f as isize + 1, tx);
            let v = g.get(x, y) as usize;
            let l = |ti: usize, tj: usize| luts[tj * tx + ti][v] as f64;
            let top = l(tx1, ty1) * (1.0 - xa) + l(tx2, ty1) * xa;
            let bottom = l(tx1, ty2) * (1.0 - xa) + l(tx2, ty2) * xa;
            out.push((top * (1.0 - ya) + bottom * ya).round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(w, h, out)
}

fn clamp_tile(t: isize, n: usize) -> usize {
    t.clamp(0, n as isize - 1) as usize
}

fn clip_histogram(hist: &mut [usize; BINS], limit: usize) {
    let mut excess = 0usize;
    for count in hist.iter_mut() {
        if *count > limit {
            excess += *count - limit;
            *count = limit;
        }
    }
    let batch = excess / BINS;
    let residual = excess - batch * BINS;
    for count in hist.iter_mut() {
        *count += batch;
    }
    if residual > 0 {
        let step = (BINS / residual).max(1);
        let mut i = 0;
        let mut left = residual;
        while i < BINS && left > 0 {
            hist[i] += 1;
            left -= 1;
            i += step;
        }
    }
}
