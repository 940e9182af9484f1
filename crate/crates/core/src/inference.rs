//! Grid-prompted segmentation of a full frame: denoise, prompt on a grid,
//! merge the per-prompt masks, clean up and measure foam coverage.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::imaging::{
    bilateral_filter, connected_components_filter, denoise_nlmeans, load_image, morphology, resize, save_mask_png, save_png,
    to_grayscale, BinaryMask, Image, Kernel, MorphOp, ResizeTarget,
};
use crate::maskgen::{file_stem, list_images, overlay};
use crate::metrics::iou;
use crate::model::{BaseFeatures, ModelParams, PointPrompt, ReferenceModel, SegmentationModel};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceConfig {
    pub n_points: usize,
    pub max_dim: usize,
    pub overlap_threshold: f64,
    pub min_area_frac: f64,
    pub morph_kernel: Kernel,
    pub bilateral_diameter: usize,
    pub bilateral_sigma_color: f64,
    pub bilateral_sigma_space: f64,
    pub nlmeans_h: f64,
    pub nlmeans_template: usize,
    pub nlmeans_search: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            n_points: 50,
            max_dim: 1024,
            overlap_threshold: 0.3,
            min_area_frac: 0.002,
            morph_kernel: Kernel::ellipse(5),
            bilateral_diameter: 9,
            bilateral_sigma_color: 75.0,
            bilateral_sigma_space: 75.0,
            nlmeans_h: 10.0,
            nlmeans_template: 7,
            nlmeans_search: 21,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::InvalidArgument("n_points must be >= 1".into()));
        }
        if self.max_dim == 0 {
            return Err(Error::InvalidArgument("max_dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_threshold) {
            return Err(Error::InvalidArgument(format!("overlap threshold {} outside [0, 1)", self.overlap_threshold)));
        }
        if !(0.0..1.0).contains(&self.min_area_frac) {
            return Err(Error::InvalidArgument(format!("min area fraction {} outside [0, 1)", self.min_area_frac)));
        }
        Ok(())
    }

    /// Smallest component kept in a `w × h` mask.
    pub fn min_area(&self, w: usize, h: usize) -> usize {
        (self.min_area_frac * (w * h) as f64).ceil() as usize
    }
}

/// A candidate mask from one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredMask {
    pub mask: BinaryMask,
    pub score: f64,
    pub prompt: PointPrompt,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    /// Final mask at working resolution.
    pub mask: BinaryMask,
    pub foam_pct: f64,
    /// The resized input the mask refers to.
    pub working: Image,
    pub candidates: usize,
    pub accepted_area: usize,
}

/// Positive prompts at the centres of a `g × g` grid, `g = ⌈√n⌉`, in
/// row-major order and truncated to `n`.
pub fn generate_grid_points(w: usize, h: usize, n: usize) -> Vec<PointPrompt> {
    if n == 0 || w == 0 || h == 0 {
        return Vec::new();
    }
    let g = (n as f64).sqrt().ceil() as usize;
    let centre = |i: usize, side: usize| ((2 * i + 1) * side) / (2 * g);
    (0..g)
        .flat_map(|j| (0..g).map(move |i| (i, j)))
        .take(n)
        .map(|(i, j)| PointPrompt::positive(centre(i, w), centre(j, h)))
        .collect()
}

/// Greedy merge: candidates in descending score (ties by prompt row-major
/// position) are accepted while their IoU with everything accepted so far
/// stays below `overlap_threshold`. Returns the union of accepted masks.
pub fn refine_masks(cands: &[ScoredMask], overlap_threshold: f64) -> Result<Option<BinaryMask>> {
    let Some(first) = cands.first() else {
        return Ok(None);
    };
    let dims = first.mask.dims();
    if let Some(bad) = cands.iter().find(|c| c.mask.dims() != dims) {
        return Err(Error::DimensionMismatch {
            left: dims,
            right: bad.mask.dims(),
        });
    }
    let mut order: Vec<&ScoredMask> = cands.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.prompt.y, a.prompt.x).cmp(&(b.prompt.y, b.prompt.x)))
    });
    let mut union = BinaryMask::zeros(dims.0, dims.1);
    let mut any = false;
    for c in order {
        if !any || iou(&c.mask, &union)? < overlap_threshold {
            union.union_in_place(&c.mask);
            any = true;
        }
    }
    Ok(Some(union))
}

/// 100 × set pixels / all pixels.
pub fn foam_percentage(m: &BinaryMask) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::EmptyImage);
    }
    Ok(100.0 * m.count() as f64 / m.len() as f64)
}

/// The 8-connected component of `m` containing `(x, y)`, or an empty mask
/// when that pixel is unset.
fn component_at(m: &BinaryMask, x: usize, y: usize) -> BinaryMask {
    let (w, h) = m.dims();
    let mut out = BinaryMask::zeros(w, h);
    if !m.get(x, y) {
        return out;
    }
    let mut stack = vec![(x, y)];
    out.set(x, y, true);
    while let Some((cx, cy)) = stack.pop() {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if m.get(nx, ny) && !out.get(nx, ny) {
                    out.set(nx, ny, true);
                    stack.push((nx, ny));
                }
            }
        }
    }
    out
}

/// Per-prompt candidates: the 0.5-thresholded prediction restricted to the
/// component under the prompt, scored by the model's score head.
pub fn predict_candidates<M: SegmentationModel>(
    model: &M,
    params: &ModelParams,
    base: &BaseFeatures,
    prompts: &[PointPrompt],
) -> Result<Vec<ScoredMask>> {
    prompts
        .par_iter()
        .map(|&prompt| {
            let features = base.with_prompts(&[prompt]);
            let (prob, score) = model.forward(params, &features)?;
            Ok(ScoredMask {
                mask: component_at(&prob.threshold(0.5), prompt.x, prompt.y),
                score,
                prompt,
            })
        })
        .collect()
}

pub fn segment_foam(img: &Image, params: &ModelParams, cfg: &InferenceConfig) -> Result<Segmentation> {
    segment_foam_with(&ReferenceModel, img, params, cfg)
}

pub fn segment_foam_with<M: SegmentationModel>(model: &M, img: &Image, params: &ModelParams, cfg: &InferenceConfig) -> Result<Segmentation> {
    cfg.validate()?;
    let working = resize(img, ResizeTarget::MaxDim(cfg.max_dim));
    let (w, h) = (working.width(), working.height());
    let gray = to_grayscale(&working)?;
    let smooth = bilateral_filter(&gray, cfg.bilateral_diameter, cfg.bilateral_sigma_color, cfg.bilateral_sigma_space)?;
    let denoised = denoise_nlmeans(&smooth, cfg.nlmeans_h, cfg.nlmeans_template, cfg.nlmeans_search)?;
    let base = BaseFeatures::from_gray(&denoised);
    let prompts = generate_grid_points(w, h, cfg.n_points);
    let cands = predict_candidates(model, params, &base, &prompts)?;
    let refined = refine_masks(&cands, cfg.overlap_threshold)?.unwrap_or_else(|| BinaryMask::zeros(w, h));
    let accepted_area = refined.count();
    let opened = morphology(&refined, MorphOp::Open, &cfg.morph_kernel, 1)?;
    let closed = morphology(&opened, MorphOp::Close, &cfg.morph_kernel, 1)?;
    let mask = connected_components_filter(&closed, cfg.min_area(w, h));
    let foam_pct = foam_percentage(&mask)?;
    Ok(Segmentation {
        mask,
        foam_pct,
        working,
        candidates: cands.len(),
        accepted_area,
    })
}

/// One line of `infer` output.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceRecord {
    pub stem: String,
    pub foam_pct: f64,
    pub mask_path: PathBuf,
    pub overlay_path: PathBuf,
}

/// Segments one file, writing `<stem>_mask.png` and `<stem>_overlay.png`
/// into `output_dir`.
pub fn infer_file(path: &Path, params: &ModelParams, cfg: &InferenceConfig, output_dir: &Path) -> Result<InferenceRecord> {
    let img = load_image(path)?;
    let seg = segment_foam(&img, params, cfg)?;
    let stem = file_stem(path);
    std::fs::create_dir_all(output_dir).map_err(|e| Error::io(format!("creating {}", output_dir.display()), e))?;
    let mask_path = output_dir.join(format!("{stem}_mask.png"));
    let overlay_path = output_dir.join(format!("{stem}_overlay.png"));
    save_mask_png(&seg.mask, &mask_path)?;
    save_png(&overlay(&seg.working, &seg.mask), &overlay_path)?;
    Ok(InferenceRecord {
        stem,
        foam_pct: seg.foam_pct,
        mask_path,
        overlay_path,
    })
}

/// A single image, or every image in a directory in name order.
pub fn infer_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        list_images(input)
    } else if input.is_file() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(Error::InvalidArgument(format!("{} does not exist", input.display())))
    }
}
