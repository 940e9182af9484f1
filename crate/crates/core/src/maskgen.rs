//! Automatic day/night foam mask generation.
//!
//! ```text
//! gray ─ mean < night_threshold? ─┬─ night: linear scale → NL-means → adaptive threshold
//!                                 └─ day:   CLAHE → adaptive threshold
//!      → opening → drop components smaller than min_area → overlay
//! ```

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::{
    adaptive_threshold_gaussian, clahe, connected_components_filter, denoise_nlmeans, linear_scale, load_image,
    mean_brightness, morphology, save_mask_png, save_png, to_grayscale, BinaryMask, Image, Kernel, KernelShape,
    MorphOp,
};
use crate::{Error, Result};

/// Tunables of the mask generator. Serialized as a flat TOML table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskGenConfig {
    pub night_threshold: f64,
    pub min_area: usize,
    pub open_kernel_shape: KernelShape,
    pub open_kernel_size: usize,
    pub open_iterations: usize,
    pub night_gain: f64,
    pub night_bias: f64,
    pub nlmeans_h: f64,
    pub nlmeans_template: usize,
    pub nlmeans_search: usize,
    pub clahe_clip_limit: f64,
    pub clahe_tiles_x: usize,
    pub clahe_tiles_y: usize,
    pub threshold_block: usize,
    pub threshold_c: f64,
}

impl Default for MaskGenConfig {
    fn default() -> Self {
        Self {
            night_threshold: 100.0,
            min_area: 75,
            open_kernel_shape: KernelShape::Rect,
            open_kernel_size: 3,
            open_iterations: 2,
            night_gain: 1.5,
            night_bias: 40.0,
            nlmeans_h: 10.0,
            nlmeans_template: 7,
            nlmeans_search: 21,
            clahe_clip_limit: 2.0,
            clahe_tiles_x: 8,
            clahe_tiles_y: 8,
            threshold_block: 11,
            // Foam must exceed its Gaussian neighbourhood mean by 2 levels.
            threshold_c: -2.0,
        }
    }
}

impl MaskGenConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=255.0).contains(&self.night_threshold) {
            return Err(Error::Config(format!("night_threshold {} outside [0, 255]", self.night_threshold)));
        }
        self.open_kernel()?;
        if self.open_iterations == 0 {
            return Err(Error::Config("open_iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn open_kernel(&self) -> Result<Kernel> {
        Kernel::new(self.open_kernel_shape, self.open_kernel_size, self.open_kernel_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Day,
    Night,
}

#[derive(Clone, Debug)]
pub struct MaskGenResult {
    pub mask: BinaryMask,
    pub overlay: Image,
    pub branch: Branch,
    pub brightness: f64,
    pub foam_fraction: f64,
}

pub fn generate_mask(img: &Image, cfg: &MaskGenConfig) -> Result<MaskGenResult> {
    let gray = to_grayscale(img)?;
    let brightness = mean_brightness(&gray)?;
    let (branch, enhanced) = if brightness < cfg.night_threshold {
        let bright = linear_scale(&gray, cfg.night_gain, cfg.night_bias);
        let clean = denoise_nlmeans(&bright, cfg.nlmeans_h, cfg.nlmeans_template, cfg.nlmeans_search)?;
        (Branch::Night, clean)
    } else {
        let eq = clahe(&gray, cfg.clahe_clip_limit, (cfg.clahe_tiles_x, cfg.clahe_tiles_y))?;
        (Branch::Day, eq)
    };
    let raw = adaptive_threshold_gaussian(&enhanced, cfg.threshold_block, cfg.threshold_c)?;
    let opened = morphology(&raw, MorphOp::Open, &cfg.open_kernel()?, cfg.open_iterations)?;
    let mask = connected_components_filter(&opened, cfg.min_area);
    let overlay = overlay(img, &mask);
    let foam_fraction = mask.count() as f64 / mask.len() as f64;
    Ok(MaskGenResult {
        mask,
        overlay,
        branch,
        brightness,
        foam_fraction,
    })
}

/// Blends foam pixels 50% with pure red; other pixels are copied.
pub fn overlay(img: &Image, mask: &BinaryMask) -> Image {
    let rgb = img.to_rgb();
    Image::from_fn_rgb(rgb.width(), rgb.height(), |x, y| {
        let p = rgb.pixel(x, y);
        if mask.get(x, y) {
            [
                ((p[0] as u16 + 255 + 1) / 2) as u8,
                ((p[1] as u16 + 1) / 2) as u8,
                ((p[2] as u16 + 1) / 2) as u8,
            ]
        } else {
            [p[0], p[1], p[2]]
        }
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaskGenReport {
    pub processed: usize,
    pub skipped: usize,
    pub day: usize,
    pub night: usize,
}

pub(crate) fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Sorted image files (png/jpg/jpeg) directly inside `dir`.
pub(crate) fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

pub(crate) fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Runs [`generate_mask`] on every image in `input_dir`, writing
/// `<stem>_mask.png` and `<stem>_overlay.png` into `output_dir`.
/// Unreadable images are skipped with a warning.
pub fn process_directory(input_dir: &Path, output_dir: &Path, cfg: &MaskGenConfig) -> Result<MaskGenReport> {
    cfg.validate()?;
    std::fs::create_dir_all(output_dir).map_err(|e| Error::io(format!("creating {}", output_dir.display()), e))?;
    let files = list_images(input_dir)?;
    let outcomes: Vec<Result<Option<Branch>>> = files
        .par_iter()
        .map(|path| {
            let img = match load_image(path) {
                Ok(img) => img,
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    return Ok(None);
                }
            };
            let result = match generate_mask(&img, cfg) {
                Ok(r) => r,
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    return Ok(None);
                }
            };
            let stem = file_stem(path);
            save_mask_png(&result.mask, &output_dir.join(format!("{stem}_mask.png")))?;
            save_png(&result.overlay, &output_dir.join(format!("{stem}_overlay.png")))?;
            info!(
                "{stem}: {:?} (brightness {:.1}), foam {:.2}%",
                result.branch,
                result.brightness,
                100.0 * result.foam_fraction
            );
            Ok(Some(result.branch))
        })
        .collect();

    let mut report = MaskGenReport::default();
    for outcome in outcomes {
        match outcome? {
            Some(Branch::Day) => {
                report.processed += 1;
                report.day += 1;
            }
            Some(Branch::Night) => {
                report.processed += 1;
                report.night += 1;
            }
            None => report.skipped += 1,
        }
    }
    Ok(report)
}
