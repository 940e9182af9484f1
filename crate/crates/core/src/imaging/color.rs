use super::{GrayImage, Image};
use crate::{Error, Result};

/// ITU-R 601 luma, `round(0.299 R + 0.587 G + 0.114 B)`, in exact integer
/// arithmetic. Single-channel input is copied.
pub fn to_grayscale(img: &Image) -> Result<GrayImage> {
    let data = match img.channels() {
        1 => img.data().to_vec(),
        3 => img
            .data()
            .chunks_exact(3)
            .map(|px| {
                let acc = 299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32;
                ((acc + 500) / 1000) as u8
            })
            .collect(),
        c => return Err(Error::UnsupportedChannels(c)),
    };
    GrayImage::new(img.width(), img.height(), data)
}

/// Arithmetic mean of all pixel values.
pub fn mean_brightness(g: &GrayImage) -> Result<f64> {
    if g.data().is_empty() {
        return Err(Error::EmptyImage);
    }
    let sum: u64 = g.data().iter().map(|&v| v as u64).sum();
    Ok(sum as f64 / g.data().len() as f64)
}

/// `clamp(round(gain·v + bias), 0, 255)` per pixel.
pub fn linear_scale(g: &GrayImage, gain: f64, bias: f64) -> GrayImage {
    let lut: Vec<u8> = (0..256)
        .map(|v| (gain * v as f64 + bias).round().clamp(0.0, 255.0) as u8)
        .collect();
    g.map(|v| lut[v as usize])
}
