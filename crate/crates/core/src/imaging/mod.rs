//! Raster primitives shared by every pipeline stage.
//!
//! Everything here is a pure function over immutable buffers. Filters that
//! need transcendental weights (Gaussian, exponential patch similarity)
//! quantize those weights to integers before accumulating, so the output
//! bytes do not depend on the platform's `exp` implementation.

mod clahe;
mod color;
mod components;
mod denoise;
mod io;
mod morphology;
mod resize;
mod threshold;

pub use clahe::clahe;
pub use color::{linear_scale, mean_brightness, to_grayscale};
pub use components::{component_areas, connected_components_filter, label_components, Labels};
pub use denoise::{bilateral_filter, denoise_nlmeans};
pub use io::{decode_image, encode_png, load_image, load_mask, save_gray_png, save_mask_png, save_png};
pub(crate) use io::write_atomic;
pub use morphology::{dilate, erode, morphology, MorphOp};
pub use resize::{resize, resize_mask_nearest, ResizeTarget};
pub use threshold::adaptive_threshold_gaussian;

use crate::{Error, Result};

/// Interleaved 8-bit raster with one (gray) or three (RGB) channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "image buffer has {} bytes, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// RGB image filled from a per-pixel closure.
    pub fn from_fn_rgb(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 3,
            data,
        }
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Three-channel copy; gray images are replicated across channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }
}

impl From<GrayImage> for Image {
    fn from(g: GrayImage) -> Self {
        Image {
            width: g.width,
            height: g.height,
            channels: 1,
            data: g.data,
        }
    }
}

/// Single-channel 8-bit raster.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "gray buffer has {} bytes, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with reflect-101 border extension.
    pub(crate) fn get_reflect(&self, x: isize, y: isize) -> u8 {
        let xr = reflect101(x, self.width);
        let yr = reflect101(y, self.height);
        self.data[yr * self.width + xr]
    }

    pub(crate) fn map(&self, f: impl Fn(u8) -> u8) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Binary raster holding only 0 or 1.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    /// Builds a mask from arbitrary bytes; any nonzero value becomes 1.
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "mask buffer has {} bytes, expected {}",
                data.len(),
                width * height
            )));
        }
        let data = data.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(x, y)));
            }
        }
        Self {
            width,
            height,
            data,
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = u8::from(value);
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Pixelwise OR. Panics on dimension mismatch.
    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!(self.dims(), other.dims());
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a | b).collect(),
        }
    }

    pub fn union_in_place(&mut self, other: &BinaryMask) {
        assert_eq!(self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    /// True if every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(a, b)| a <= b)
    }

    /// Mask rendered as a gray image with values {0, 255}.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v * 255).collect(),
        }
    }

    /// Binarizes a gray image: values above 127 become foam.
    pub fn from_gray(g: &GrayImage) -> BinaryMask {
        BinaryMask {
            width: g.width,
            height: g.height,
            data: g.data.iter().map(|&v| u8::from(v > 127)).collect(),
        }
    }
}

/// Per-pixel foreground probabilities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMask {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ProbMask {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "probability buffer has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, p: f32) -> Self {
        Self::new(width, height, vec![p; width * height]).expect("valid probability")
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Pixels with probability strictly above `t` become foam.
    pub fn threshold(&self, t: f32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| u8::from(p > t)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    Rect,
    Ellipse,
}

/// Structuring element with odd side lengths, anchored at its center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Kernel {
    pub shape: KernelShape,
    pub width: usize,
    pub height: usize,
}

impl Kernel {
    pub fn new(shape: KernelShape, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || width % 2 == 0 || height % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel sides must be odd and positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            shape,
            width,
            height,
        })
    }

    pub fn rect(size: usize) -> Self {
        Self::new(KernelShape::Rect, size, size).expect("odd kernel size")
    }

    pub fn ellipse(size: usize) -> Self {
        Self::new(KernelShape::Ellipse, size, size).expect("odd kernel size")
    }

    /// Offsets (dx, dy) relative to the anchor covered by this element.
    ///
    /// The ellipse rasterization matches the common row-span construction:
    /// each row spans `±round(c·sqrt(1 − dy²/r²))` around the center column.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let (w, h) = (self.width as isize, self.height as isize);
        let (cx, cy) = (w / 2, h / 2);
        let mut out = Vec::new();
        for i in 0..h {
            let (j1, j2) = match self.shape {
                KernelShape::Rect => (0, w),
                KernelShape::Ellipse => {
                    let dy = i - cy;
                    if dy.abs() <= cy {
                        let inv_r2 = if cy > 0 { 1.0 / (cy * cy) as f64 } else { 0.0 };
                        let dx = (cx as f64 * (((cy * cy - dy * dy) as f64) * inv_r2).sqrt()).round() as isize;
                        ((cx - dx).max(0), (cx + dx + 1).min(w))
                    } else {
                        (0, 0)
                    }
                }
            };
            for j in j1..j2 {
                out.push((j - cx, i - cy));
            }
        }
        out
    }
}

/// Reflect-101 index extension (`dcb|abcd|cba`).
pub(crate) fn reflect101(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}
