use super::{BinaryMask, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeTarget {
    /// Exact output size `(width, height)`.
    Exact(usize, usize),
    /// Shrink so the longest side is at most this many pixels, keeping the
    /// aspect ratio. Never enlarges.
    MaxDim(usize),
}

impl ResizeTarget {
    pub fn output_size(self, w: usize, h: usize) -> (usize, usize) {
        match self {
            ResizeTarget::Exact(tw, th) => (tw.max(1), th.max(1)),
            ResizeTarget::MaxDim(max_dim) => {
                let longest = w.max(h);
                if longest <= max_dim {
                    (w, h)
                } else if w >= h {
                    (max_dim, ((h as f64 * max_dim as f64 / w as f64).round() as usize).max(1))
                } else {
                    (((w as f64 * max_dim as f64 / h as f64).round() as usize).max(1), max_dim)
                }
            }
        }
    }
}

/// Bilinear resampling with half-pixel centre alignment.
pub fn resize(img: &Image, target: ResizeTarget) -> Image {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let (nw, nh) = target.output_size(w, h);
    if (nw, nh) == (w, h) {
        return img.clone();
    }
    let xs = sample_axis(w, nw);
    let ys = sample_axis(h, nh);
    let src = img.data();
    let mut out = Vec::with_capacity(nw * nh * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let p = |x: usize, y: usize| src[(y * w + x) * ch + c] as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(nw, nh, ch, out).expect("resize output is well formed")
}

// (left index, right index, right weight) for every output coordinate.
fn sample_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let f = (d as f64 + 0.5) * scale - 0.5;
            if f <= 0.0 {
                (0, 0, 0.0)
            } else if f >= (src - 1) as f64 {
                (src - 1, src - 1, 0.0)
            } else {
                let i = f.floor();
                (i as usize, i as usize + 1, f - i)
            }
        })
        .collect()
}

/// Nearest-neighbour resampling for masks (values stay binary).
pub fn resize_mask_nearest(m: &BinaryMask, width: usize, height: usize) -> BinaryMask {
    let (w, h) = m.dims();
    if (w, h) == (width, height) {
        return m.clone();
    }
    BinaryMask::from_fn(width, height, |x, y| {
        let sx = (((x as f64 + 0.5) * w as f64 / width as f64) as usize).min(w - 1);
        let sy = (((y as f64 + 0.5) * h as f64 / height as f64) as usize).min(h - 1);
        m.get(sx, sy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn max_dim_sizes() {
        assert_eq!(ResizeTarget::MaxDim(1024).output_size(1024, 1024), (1024, 1024));
        assert_eq!(ResizeTarget::MaxDim(1024).output_size(2048, 1024), (1024, 512));
        assert_eq!(ResizeTarget::MaxDim(1024).output_size(300, 200), (300, 200));
        assert_eq!(ResizeTarget::MaxDim(100).output_size(50, 400), (13, 100));
    }

    #[test]
    fn same_size_is_identity() {
        let img = Image::from_fn_rgb(7, 5, |x, y| [(x * 30) as u8, (y * 40) as u8, 9]);
        assert_eq!(resize(&img, ResizeTarget::Exact(7, 5)), img);
        assert_eq!(resize(&img, ResizeTarget::MaxDim(10)), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::from_fn_rgb(33, 17, |_, _| [12, 200, 99]);
        let out = resize(&img, ResizeTarget::Exact(10, 41));
        assert_eq!((out.width(), out.height()), (10, 41));
        assert!(out.data().chunks(3).all(|p| p == [12, 200, 99]));
    }

    #[test]
    fn nearest_mask_downscale() {
        let m = BinaryMask::from_fn(4, 4, |x, _| x >= 2);
        let out = resize_mask_nearest(&m, 2, 2);
        assert_eq!(out.data(), &[0, 1, 0, 1]);
    }

    proptest! {
        #[test]
        fn max_dim_keeps_aspect(w in 1usize..3000, h in 1usize..3000, max_dim in 16usize..1500) {
            let (nw, nh) = ResizeTarget::MaxDim(max_dim).output_size(w, h);
            prop_assert!(nw.max(nh) <= max_dim.max(w.max(h).min(max_dim)));
            prop_assert!(nw <= w && nh <= h);
            // Rounding one side never moves it more than a pixel off the exact ratio.
            if w >= h {
                prop_assert!((nh as f64 - h as f64 * nw as f64 / w as f64).abs() <= 1.0);
            } else {
                prop_assert!((nw as f64 - w as f64 * nh as f64 / h as f64).abs() <= 1.0);
            }
        }
    }
}
