use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{label_components, BinaryMask};

/// Spatial cue for the model: label 1 marks foam, 0 marks background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PointPrompt {
    pub x: usize,
    pub y: usize,
    pub label: u8,
}

impl PointPrompt {
    pub fn positive(x: usize, y: usize) -> Self {
        Self { x, y, label: 1 }
    }

    pub fn negative(x: usize, y: usize) -> Self {
        Self { x, y, label: 0 }
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// One positive prompt at a uniformly drawn pixel of every 8-connected foam
/// component (in label order), or a single negative prompt at the image
/// centre when the mask is empty.
pub fn generate_point_prompts(gt: &BinaryMask, rng_seed: u64) -> Vec<PointPrompt> {
    let labels = label_components(gt);
    if labels.count() == 0 {
        return vec![PointPrompt::negative(gt.width() / 2, gt.height() / 2)];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let picks: Vec<usize> = labels.areas.iter().map(|&a| rng.random_range(0..a)).collect();
    let mut seen = vec![0usize; labels.count()];
    let mut out = vec![PointPrompt::positive(0, 0); labels.count()];
    for (i, &l) in labels.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let k = l as usize - 1;
        if seen[k] == picks[k] {
            out[k] = PointPrompt::positive(i % gt.width(), i / gt.width());
        }
        seen[k] += 1;
    }
    out
}
