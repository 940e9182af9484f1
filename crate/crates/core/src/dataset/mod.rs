//! Image/mask corpora: loading, augmentation, client partitioning and a
//! procedural foam generator.

mod augment;
mod partition;
mod synth;

use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use crate::imaging::{load_image, load_mask, resize, resize_mask_nearest, save_mask_png, save_png, BinaryMask, Image, ResizeTarget};
use crate::maskgen::{file_stem, list_images};
use crate::{Error, Result};

pub use augment::{affine, augment, brightness_contrast, hflip, vflip, AffineParams, AugmentConfig};
pub use partition::{partition, Partition, PartitionMode};
pub use synth::{simulation_corpus, synth_generate, synth_generate_with, SynthConfig, HIGH_NOISE_SOURCE, LOW_NOISE_SOURCE};

/// An image with its ground-truth mask. `name` is the file stem the pair was
/// loaded from (or generated as).
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub image: Image,
    pub mask: BinaryMask,
    pub source_id: String,
    pub name: String,
}

impl SamplePair {
    pub fn new(image: Image, mask: BinaryMask, source_id: impl Into<String>, name: impl Into<String>) -> Result<Self> {
        if (image.width(), image.height()) != mask.dims() {
            return Err(Error::DimensionMismatch {
                left: (image.width(), image.height()),
                right: mask.dims(),
            });
        }
        Ok(Self {
            image,
            mask,
            source_id: source_id.into(),
            name: name.into(),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadedPairs {
    pub pairs: Vec<SamplePair>,
    /// Images without a matching `<stem>_mask.png`.
    pub skipped: Vec<PathBuf>,
}

/// Pairs `image_dir/<stem>.(png|jpg|jpeg)` with `mask_dir/<stem>_mask.png`,
/// sorted by file name. Images are resized bilinearly, masks by nearest
/// neighbour. The source id of every pair is the name of the directory
/// containing `image_dir` (the corpus root).
pub fn load_pairs(image_dir: &Path, mask_dir: &Path, target: ResizeTarget) -> Result<LoadedPairs> {
    let images = list_images(image_dir)?;
    let source = corpus_name(image_dir);
    let mut matched = Vec::new();
    let mut skipped = Vec::new();
    for path in images {
        let stem = file_stem(&path);
        let mask_path = mask_dir.join(format!("{stem}_mask.png"));
        if mask_path.is_file() {
            matched.push((path, mask_path, stem));
        } else {
            warn!("no mask for {}, skipping", path.display());
            skipped.push(path);
        }
    }
    if matched.is_empty() {
        return Err(Error::NoMatchingPairs(image_dir.to_path_buf()));
    }
    let pairs = matched
        .par_iter()
        .map(|(img_path, mask_path, stem)| {
            let img = load_image(img_path)?;
            let mask = load_mask(mask_path)?;
            let img = resize(&img, target);
            let mask = resize_mask_nearest(&mask, img.width(), img.height());
            SamplePair::new(img, mask, source.clone(), stem.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedPairs { pairs, skipped })
}

fn corpus_name(image_dir: &Path) -> String {
    let abs = image_dir.canonicalize().unwrap_or_else(|_| image_dir.to_path_buf());
    abs.parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "local".to_string())
}

/// Writes pairs in the corpus layout: `root/images/<name>.png` and
/// `root/masks/<name>_mask.png`.
pub fn save_corpus(pairs: &[SamplePair], root: &Path) -> Result<()> {
    let images = root.join("images");
    let masks = root.join("masks");
    for dir in [&images, &masks] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    pairs.par_iter().try_for_each(|p| {
        save_png(&p.image, &images.join(format!("{}.png", p.name)))?;
        save_mask_png(&p.mask, &masks.join(format!("{}_mask.png", p.name)))
    })
}
