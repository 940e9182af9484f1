//! Overlap metrics and training losses for binary segmentation.

use serde::{Deserialize, Serialize};

use crate::imaging::{BinaryMask, ProbMask};
use crate::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before any logarithm.
pub const PROB_EPS: f64 = 1e-7;
/// Additive smoothing in numerator and denominator of the soft Dice.
pub const DICE_SMOOTH: f64 = 1.0;

/// Metrics reported per client and per round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub loss: f64,
    pub iou: f64,
    pub dice: f64,
    pub pixel_accuracy: f64,
}

impl RoundMetrics {
    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.iou.is_finite() && self.dice.is_finite() && self.pixel_accuracy.is_finite()
    }

    /// Sample-weighted average of `(metrics, n)` pairs. `None` when the
    /// total weight is zero.
    pub fn weighted_average<'a>(items: impl IntoIterator<Item = (&'a RoundMetrics, u64)>) -> Option<RoundMetrics> {
        let mut total = 0u64;
        let mut acc = RoundMetrics::default();
        for (m, n) in items {
            let w = n as f64;
            total += n;
            acc.loss += w * m.loss;
            acc.iou += w * m.iou;
            acc.dice += w * m.dice;
            acc.pixel_accuracy += w * m.pixel_accuracy;
        }
        (total > 0).then(|| {
            let t = total as f64;
            RoundMetrics {
                loss: acc.loss / t,
                iou: acc.iou / t,
                dice: acc.dice / t,
                pixel_accuracy: acc.pixel_accuracy / t,
            }
        })
    }
}

/// Weights of the training objective
/// `alpha·DiceLoss + (1 - alpha)·BCE + score_weight·score term`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub score_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            score_weight: 0.05,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.score_weight >= 0.0) {
            return Err(Error::InvalidArgument(format!("score weight {} is negative", self.score_weight)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    intersection: usize,
    pred: usize,
    gt: usize,
    agree: usize,
    total: usize,
}

fn counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<Counts> {
    check_dims(pred.dims(), gt.dims())?;
    let mut c = Counts {
        total: pred.len(),
        ..Counts::default()
    };
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        c.intersection += (p & g) as usize;
        c.pred += p as usize;
        c.gt += g as usize;
        c.agree += (p == g) as usize;
    }
    Ok(c)
}

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

/// `2|A∩B| / (|A| + |B|)`; 1.0 when both masks are empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let c = counts(pred, gt)?;
    let denom = c.pred + c.gt;
    Ok(if denom == 0 {
        1.0
    } else {
        2.0 * c.intersection as f64 / denom as f64
    })
}

/// `|A∩B| / |A∪B|`; 1.0 when both masks are empty.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let c = counts(pred, gt)?;
    let union = c.pred + c.gt - c.intersection;
    Ok(if union == 0 {
        1.0
    } else {
        c.intersection as f64 / union as f64
    })
}

pub fn pixel_accuracy(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let c = counts(pred, gt)?;
    Ok(c.agree as f64 / c.total as f64)
}

/// Dice, IoU and pixel accuracy in one pass; `loss` is left at zero.
pub fn overlap_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<RoundMetrics> {
    let c = counts(pred, gt)?;
    let union = c.pred + c.gt - c.intersection;
    Ok(RoundMetrics {
        loss: 0.0,
        dice: if c.pred + c.gt == 0 {
            1.0
        } else {
            2.0 * c.intersection as f64 / (c.pred + c.gt) as f64
        },
        iou: if union == 0 {
            1.0
        } else {
            c.intersection as f64 / union as f64
        },
        pixel_accuracy: c.agree as f64 / c.total as f64,
    })
}

/// Soft Dice loss and mean binary cross-entropy over raw probabilities.
///
/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` first.
pub fn loss_components(probs: &[f64], gt: &[u8]) -> (f64, f64) {
    debug_assert_eq!(probs.len(), gt.len());
    let (mut inter, mut psum, mut gsum, mut bce) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &g) in probs.iter().zip(gt) {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let g = g as f64;
        inter += p * g;
        psum += p;
        gsum += g;
        bce -= g * p.ln() + (1.0 - g) * (1.0 - p).ln();
    }
    let soft_dice = (2.0 * inter + DICE_SMOOTH) / (psum + gsum + DICE_SMOOTH);
    (1.0 - soft_dice, bce / probs.len() as f64)
}

/// `alpha·DiceLoss + (1 - alpha)·BCE`.
pub fn seg_loss(pred: &ProbMask, gt: &BinaryMask, cfg: &LossConfig) -> Result<f64> {
    check_dims(pred.dims(), gt.dims())?;
    let probs: Vec<f64> = pred.data().iter().map(|&p| p as f64).collect();
    let (dice_loss, bce) = loss_components(&probs, gt.data());
    Ok(cfg.alpha * dice_loss + (1.0 - cfg.alpha) * bce)
}

/// `|score - IoU(pred, gt)|`.
pub fn score_loss(score: f64, pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok((score - iou(pred, gt)?).abs())
}
