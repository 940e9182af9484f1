use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SamplePair;
use crate::imaging::{reflect101, BinaryMask, Image};
use crate::{Error, Result};

/// Per-transform probabilities and ranges. Shift and scale are fractions
/// (±5% of the side, ±10% zoom), rotation is in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_brightness_contrast: f64,
    pub p_affine: f64,
    pub shift: f64,
    pub scale: f64,
    pub rotate: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_hflip: 0.5,
            p_vflip: 0.5,
            p_brightness_contrast: 0.2,
            p_affine: 0.5,
            shift: 0.05,
            scale: 0.10,
            rotate: 15.0,
            brightness: 0.2,
            contrast: 0.2,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn none() -> Self {
        Self {
            p_hflip: 0.0,
            p_vflip: 0.0,
            p_brightness_contrast: 0.0,
            p_affine: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_hflip", self.p_hflip),
            ("p_vflip", self.p_vflip),
            ("p_brightness_contrast", self.p_brightness_contrast),
            ("p_affine", self.p_affine),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")));
            }
        }
        if !(0.0..1.0).contains(&self.scale) || self.shift < 0.0 || self.rotate < 0.0 {
            return Err(Error::InvalidArgument("augmentation ranges out of bounds".into()));
        }
        Ok(())
    }
}

/// One affine draw: rotation (degrees, counter-clockwise) about the image
/// centre, then zoom, then a shift in fractions of width and height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub angle_deg: f64,
    pub scale: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

impl AffineParams {
    pub fn rotation(angle_deg: f64) -> Self {
        Self {
            angle_deg,
            scale: 1.0,
            shift_x: 0.0,
            shift_y: 0.0,
        }
    }
}

/// Random augmentation. Every draw is made whether or not the transform
/// fires, so the stream stays aligned across configurations.
pub fn augment(pair: &SamplePair, cfg: &AugmentConfig, sample_seed: u64) -> Result<SamplePair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ sample_seed);
    let do_h = rng.random::<f64>() < cfg.p_hflip;
    let do_v = rng.random::<f64>() < cfg.p_vflip;
    let do_affine = rng.random::<f64>() < cfg.p_affine;
    let params = AffineParams {
        angle_deg: rng.random_range(-1.0..=1.0) * cfg.rotate,
        scale: 1.0 + rng.random_range(-1.0..=1.0) * cfg.scale,
        shift_x: rng.random_range(-1.0..=1.0) * cfg.shift,
        shift_y: rng.random_range(-1.0..=1.0) * cfg.shift,
    };
    let do_bc = rng.random::<f64>() < cfg.p_brightness_contrast;
    let alpha = 1.0 + rng.random_range(-1.0..=1.0) * cfg.contrast;
    let beta = rng.random_range(-1.0..=1.0) * cfg.brightness;

    let mut out = pair.clone();
    if do_h {
        out = hflip(&out);
    }
    if do_v {
        out = vflip(&out);
    }
    if do_affine {
        out = affine(&out, &params)?;
    }
    if do_bc {
        out.image = brightness_contrast(&out.image, alpha, beta);
    }
    Ok(out)
}

fn remap_image(img: &Image, f: impl Fn(usize, usize) -> (usize, usize)) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut data = Vec::with_capacity(w * h * c);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = f(x, y);
            data.extend_from_slice(img.pixel(sx, sy));
        }
    }
    Image::new(w, h, c, data).expect("same geometry")
}

fn remap_mask(m: &BinaryMask, f: impl Fn(usize, usize) -> (usize, usize)) -> BinaryMask {
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        let (sx, sy) = f(x, y);
        m.get(sx, sy)
    })
}

pub fn hflip(pair: &SamplePair) -> SamplePair {
    let w = pair.image.width();
    let f = |x: usize, y: usize| (w - 1 - x, y);
    SamplePair {
        image: remap_image(&pair.image, f),
        mask: remap_mask(&pair.mask, f),
        ..pair.clone()
    }
}

pub fn vflip(pair: &SamplePair) -> SamplePair {
    let h = pair.image.height();
    let f = |x: usize, y: usize| (x, h - 1 - y);
    SamplePair {
        image: remap_image(&pair.image, f),
        mask: remap_mask(&pair.mask, f),
        ..pair.clone()
    }
}

/// Applies the same affine map to image (bilinear) and mask (nearest),
/// reflecting at the borders.
pub fn affine(pair: &SamplePair, p: &AffineParams) -> Result<SamplePair> {
    if !(p.scale > 0.0) || !p.angle_deg.is_finite() || !p.shift_x.is_finite() || !p.shift_y.is_finite() {
        return Err(Error::InvalidArgument(format!("bad affine parameters {p:?}")));
    }
    let (w, h) = (pair.image.width(), pair.image.height());
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (tx, ty) = (p.shift_x * w as f64, p.shift_y * h as f64);
    let (sin, cos) = p.angle_deg.to_radians().sin_cos();
    // Output pixel centre -> source coordinate in pixel-index units.
    let inverse = |x: usize, y: usize| {
        let qx = (x as f64 + 0.5 - cx - tx) / p.scale;
        let qy = (y as f64 + 0.5 - cy - ty) / p.scale;
        // Image y grows downwards, so a counter-clockwise turn on screen
        // uses the transposed rotation.
        let sx = cos * qx - sin * qy + cx - 0.5;
        let sy = sin * qx + cos * qy + cy - 0.5;
        (sx, sy)
    };

    let c = pair.image.channels();
    let mut data = Vec::with_capacity(w * h * c);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse(x, y);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let xa = reflect101(x0 as isize, w);
            let xb = reflect101(x0 as isize + 1, w);
            let ya = reflect101(y0 as isize, h);
            let yb = reflect101(y0 as isize + 1, h);
            for ch in 0..c {
                let v = |xx: usize, yy: usize| pair.image.pixel(xx, yy)[ch] as f64;
                let top = v(xa, ya) * (1.0 - fx) + v(xb, ya) * fx;
                let bot = v(xa, yb) * (1.0 - fx) + v(xb, yb) * fx;
                data.push((top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let image = Image::new(w, h, c, data)?;
    let mask = BinaryMask::from_fn(w, h, |x, y| {
        let (sx, sy) = inverse(x, y);
        let xi = reflect101((sx + 0.5).floor() as isize, w);
        let yi = reflect101((sy + 0.5).floor() as isize, h);
        pair.mask.get(xi, yi)
    });
    Ok(SamplePair {
        image,
        mask,
        ..pair.clone()
    })
}

/// `v·alpha + beta·255`, clamped. Masks are never touched by photometric
/// transforms.
pub fn brightness_contrast(img: &Image, alpha: f64, beta: f64) -> Image {
    let data = img
        .data()
        .iter()
        .map(|&v| (v as f64 * alpha + beta * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    Image::new(img.width(), img.height(), img.channels(), data).expect("same geometry")
}
