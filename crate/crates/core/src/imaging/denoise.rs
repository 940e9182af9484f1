use rayon::prelude::*;

use super::{reflect101, GrayImage};
use crate::{Error, Result};

/// Fixed-point scale for filter weights.
const WEIGHT_ONE: f64 = 65536.0;

/// Non-local means denoising.
///
/// Every pixel becomes the weighted average of the pixels in its
/// `search × search` neighbourhood, each weighted by
/// `exp(-d² / h²)`, where `d²` is the mean squared difference between the
/// `template × template` patches centred on the two pixels. Borders use
/// reflect-101 extension.
///
/// Patch distances are computed one search offset at a time with an
/// integral image, so the cost is `O(search² · pixels)` independent of the
/// template size.
pub fn denoise_nlmeans(g: &GrayImage, h: f64, template: usize, search: usize) -> Result<GrayImage> {
    if template % 2 == 0 || search % 2 == 0 || template == 0 {
        return Err(Error::InvalidArgument(format!(
            "template ({template}) and search ({search}) windows must be odd"
        )));
    }
    if template > search {
        return Err(Error::InvalidArgument(format!(
            "template window {template} larger than search window {search}"
        )));
    }
    if !(h >= 0.0) {
        return Err(Error::InvalidArgument(format!("filter strength must be non-negative, got {h}")));
    }
    let (w, hgt) = (g.width(), g.height());
    let tr = (template / 2) as isize;
    let sr = (search / 2) as isize;
    let area = template * template;
    let lut = patch_weight_lut(h, area);

    // Reflected coordinate tables covering [-tr - sr, n + tr + sr).
    let margin = tr + sr;
    let rx: Vec<usize> = (-margin..w as isize + margin).map(|x| reflect101(x, w)).collect();
    let ry: Vec<usize> = (-margin..hgt as isize + margin).map(|y| reflect101(y, hgt)).collect();
    let src = g.data();
    let at = |x: isize, y: isize| -> i64 {
        src[ry[(y + margin) as usize] * w + rx[(x + margin) as usize]] as i64
    };

    let pw = w + 2 * tr as usize;
    let ph = hgt + 2 * tr as usize;
    let offsets: Vec<(isize, isize)> = (-sr..=sr).flat_map(|dy| (-sr..=sr).map(move |dx| (dx, dy))).collect();

    let n = w * hgt;
    let (wsum, vsum) = offsets
        .par_iter()
        .fold(
            || (vec![0u64; n], vec![0u64; n], vec![0u64; (pw + 1) * (ph + 1)]),
            |(mut wsum, mut vsum, mut integral), &(dx, dy)| {
                // Integral image of squared differences over the padded domain.
                for py in 0..ph {
                    let y = py as isize - tr;
                    let mut row = 0u64;
                    for px in 0..pw {
                        let x = px as isize - tr;
                        let d = at(x, y) - at(x + dx, y + dy);
                        row += (d * d) as u64;
                        integral[(py + 1) * (pw + 1) + px + 1] = integral[py * (pw + 1) + px + 1] + row;
                    }
                }
                let t = 2 * tr as usize + 1;
                for y in 0..hgt {
                    for x in 0..w {
                        let s = integral[(y + t) * (pw + 1) + x + t] + integral[y * (pw + 1) + x]
                            - integral[y * (pw + 1) + x + t]
                            - integral[(y + t) * (pw + 1) + x];
                        let weight = lut.get(s as usize).copied().unwrap_or(0);
                        if weight > 0 {
                            let i = y * w + x;
                            wsum[i] += weight;
                            vsum[i] += weight * at(x as isize + dx, y as isize + dy) as u64;
                        }
                    }
                }
                (wsum, vsum, integral)
            },
        )
        .map(|(w, v, _)| (w, v))
        .reduce(
            || (vec![0u64; n], vec![0u64; n]),
            |(mut wa, mut va), (wb, vb)| {
                for (a, b) in wa.iter_mut().zip(&wb) {
                    *a += b;
                }
                for (a, b) in va.iter_mut().zip(&vb) {
                    *a += b;
                }
                (wa, va)
            },
        );

    let data = wsum
        .iter()
        .zip(&vsum)
        .map(|(&ws, &vs)| ((vs + ws / 2) / ws) as u8)
        .collect();
    GrayImage::new(w, hgt, data)
}

/// Quantized `exp(-D / (area · h²))` indexed by the integer patch SSD `D`;
/// entries past the end are zero.
fn patch_weight_lut(h: f64, area: usize) -> Vec<u64> {
    let max_ssd = area * 255 * 255;
    let denom = area as f64 * h * h;
    let mut lut = Vec::new();
    for d in 0..=max_ssd {
        let wgt = if d == 0 {
            WEIGHT_ONE
        } else if denom > 0.0 {
            ((-(d as f64) / denom).exp() * WEIGHT_ONE).round()
        } else {
            0.0
        };
        if wgt <= 0.0 {
            break;
        }
        lut.push(wgt as u64);
    }
    lut
}

/// Edge-preserving bilateral smoothing over a disk of the given diameter.
///
/// Weight of a neighbour = `exp(-r² / 2σ_s²) · exp(-Δ² / 2σ_c²)` where `r`
/// is the spatial distance and `Δ` the intensity difference.
/// `sigma_color = f64::INFINITY` degenerates to a Gaussian blur on the disk.
pub fn bilateral_filter(g: &GrayImage, diameter: usize, sigma_color: f64, sigma_space: f64) -> Result<GrayImage> {
    if diameter == 0 || diameter % 2 == 0 {
        return Err(Error::InvalidArgument(format!("bilateral diameter must be odd, got {diameter}")));
    }
    if !(sigma_color > 0.0) || !(sigma_space > 0.0) {
        return Err(Error::InvalidArgument("bilateral sigmas must be positive".into()));
    }
    let r = (diameter / 2) as isize;
    let mut offsets = Vec::new();
    let mut spatial = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = dx * dx + dy * dy;
            if d2 <= r * r {
                offsets.push((dx, dy));
                spatial.push((-(d2 as f64) / (2.0 * sigma_space * sigma_space)).exp());
            }
        }
    }
    let color: Vec<f64> = (0..256)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma_color * sigma_color)).exp())
        .collect();
    // weights[k * 256 + delta]
    let weights: Vec<u64> = spatial
        .iter()
        .flat_map(|&ws| color.iter().map(move |&wc| (ws * wc * WEIGHT_ONE).round() as u64))
        .collect();

    let (w, h) = (g.width(), g.height());
    let mut out = vec![0u8; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            let center = g.get(x, y);
            let (mut ws, mut vs) = (0u64, 0u64);
            for (k, &(dx, dy)) in offsets.iter().enumerate() {
                let v = g.get_reflect(x as isize + dx, y as isize + dy);
                let wgt = weights[k * 256 + center.abs_diff(v) as usize];
                ws += wgt;
                vs += wgt * v as u64;
            }
            *px = ((vs + ws / 2) / ws) as u8;
        }
    });
    GrayImage::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain double-loop non-local means at one pixel, in floating point.
    fn nlmeans_at(g: &GrayImage, x: usize, y: usize, h: f64, template: usize, search: usize) -> f64 {
        let tr = (template / 2) as isize;
        let sr = (search / 2) as isize;
        let (x, y) = (x as isize, y as isize);
        let (mut wsum, mut vsum) = (0.0, 0.0);
        for sy in -sr..=sr {
            for sx in -sr..=sr {
                let mut ssd = 0.0;
                for ty in -tr..=tr {
                    for tx in -tr..=tr {
                        let a = g.get_reflect(x + tx, y + ty) as f64;
                        let b = g.get_reflect(x + sx + tx, y + sy + ty) as f64;
                        ssd += (a - b) * (a - b);
                    }
                }
                let wgt = (-(ssd / (template * template) as f64) / (h * h)).exp();
                wsum += wgt;
                vsum += wgt * g.get_reflect(x + sx, y + sy) as f64;
            }
        }
        vsum / wsum
    }

    fn gaussian_disk_at(g: &GrayImage, x: usize, y: usize, diameter: usize, sigma: f64) -> f64 {
        let r = (diameter / 2) as isize;
        let (mut wsum, mut vsum) = (0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (dx * dx + dy * dy) as f64;
                if d2 <= (r * r) as f64 {
                    let wgt = (-d2 / (2.0 * sigma * sigma)).exp();
                    wsum += wgt;
                    vsum += wgt * g.get_reflect(x as isize + dx, y as isize + dy) as f64;
                }
            }
        }
        vsum / wsum
    }

    fn noisy(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| ((x * 31 + y * 17 + (x * y) % 7 * 11) % 256) as u8)
    }

    #[test]
    fn nlmeans_constant_unchanged() {
        let g = GrayImage::filled(20, 15, 93);
        assert_eq!(denoise_nlmeans(&g, 10.0, 7, 21).unwrap(), g);
    }

    #[test]
    fn nlmeans_tiny_h_is_identity() {
        let g = noisy(24, 19);
        let out = denoise_nlmeans(&g, 1e-9, 3, 7).unwrap();
        for (a, b) in out.data().iter().zip(g.data()) {
            assert!(a.abs_diff(*b) <= 1);
        }
    }

    #[test]
    fn nlmeans_matches_direct_oracle() {
        let mut g = GrayImage::filled(25, 25, 100);
        let i = 12 * 25 + 12;
        let mut data = g.data().to_vec();
        data[i] = 130;
        g = GrayImage::new(25, 25, data).unwrap();
        let out = denoise_nlmeans(&g, 10.0, 7, 21).unwrap();
        let expected = nlmeans_at(&g, 12, 12, 10.0, 7, 21);
        assert!(expected < 129.5, "oracle {expected}");
        assert!((out.get(12, 12) as f64 - expected).abs() <= 1.0);
        assert!(out.get(12, 12) < 130);

        let g = noisy(18, 14);
        let out = denoise_nlmeans(&g, 25.0, 3, 9).unwrap();
        for (x, y) in [(0, 0), (5, 7), (17, 13), (9, 2)] {
            let expected = nlmeans_at(&g, x, y, 25.0, 3, 9);
            assert!((out.get(x, y) as f64 - expected).abs() <= 1.0, "({x},{y})");
        }
    }

    #[test]
    fn nlmeans_rejects_bad_windows() {
        let g = GrayImage::filled(8, 8, 0);
        assert!(denoise_nlmeans(&g, 10.0, 9, 7).is_err());
        assert!(denoise_nlmeans(&g, 10.0, 4, 7).is_err());
    }

    #[test]
    fn bilateral_constant_unchanged() {
        let g = GrayImage::filled(13, 9, 201);
        assert_eq!(bilateral_filter(&g, 9, 75.0, 75.0).unwrap(), g);
    }

    #[test]
    fn bilateral_infinite_color_sigma_is_gaussian() {
        let g = noisy(21, 16);
        let out = bilateral_filter(&g, 9, f64::INFINITY, 3.0).unwrap();
        for y in 0..16 {
            for x in 0..21 {
                let expected = gaussian_disk_at(&g, x, y, 9, 3.0);
                assert!((out.get(x, y) as f64 - expected).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn bilateral_preserves_step_edge() {
        let g = GrayImage::from_fn(20, 10, |x, _| if x < 10 { 0 } else { 255 });
        let out = bilateral_filter(&g, 9, 10.0, 75.0).unwrap();
        for y in 0..10 {
            for x in [9, 10] {
                assert!(out.get(x, y).abs_diff(g.get(x, y)) < 5);
            }
        }
    }
}
