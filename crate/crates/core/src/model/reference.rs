use rayon::prelude::*;

use super::features::{FeatureStack, NUM_FEATURES};
use super::params::{Manifest, ModelParams, NamedTensor, TensorSpec};
use crate::imaging::{BinaryMask, ProbMask};
use crate::metrics::{LossConfig, DICE_SMOOTH, PROB_EPS};
use crate::{Error, Result};

pub const W: &str = "w";
pub const B: &str = "b";
pub const W_SCORE: &str = "w_s";
pub const B_SCORE: &str = "b_s";

/// One supervised example: features, ground truth and the IoU the score
/// head should predict.
#[derive(Clone, Copy, Debug)]
pub struct TrainExample<'a> {
    pub features: &'a FeatureStack,
    pub gt: &'a BinaryMask,
    pub iou_target: f64,
}

/// A segmentation model whose parameters can be federated.
pub trait SegmentationModel: Send + Sync {
    fn manifest(&self) -> Manifest;

    fn init_params(&self) -> ModelParams {
        self.manifest().zeros()
    }

    /// Foreground probabilities and predicted mask quality.
    fn forward(&self, params: &ModelParams, features: &FeatureStack) -> Result<(ProbMask, f64)>;

    /// Mean batch loss and its gradient with respect to every tensor.
    fn loss_and_gradient(
        &self,
        params: &ModelParams,
        batch: &[TrainExample<'_>],
        loss: &LossConfig,
    ) -> Result<(f64, ModelParams)>;

    fn loss(&self, params: &ModelParams, batch: &[TrainExample<'_>], loss: &LossConfig) -> Result<f64> {
        Ok(self.loss_and_gradient(params, batch, loss)?.0)
    }
}

/// Per-pixel logistic regression over the six feature channels, plus a
/// score head: `σ(w_s · mean_p f(p) + b_s)`.
///
/// The training objective per example is
/// `α·(1 - softDice) + (1 - α)·BCE + score_weight·(score - iou_target)²`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceModel;

#[derive(Clone, Copy, Debug)]
struct Weights {
    w: [f64; NUM_FEATURES],
    b: f64,
    ws: [f64; NUM_FEATURES],
    bs: f64,
}

#[derive(Clone, Copy, Debug, Default)]
struct Grad {
    w: [f64; NUM_FEATURES],
    b: f64,
    ws: [f64; NUM_FEATURES],
    bs: f64,
}

impl Grad {
    fn add(&mut self, o: &Grad) {
        for k in 0..NUM_FEATURES {
            self.w[k] += o.w[k];
            self.ws[k] += o.ws[k];
        }
        self.b += o.b;
        self.bs += o.bs;
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn vec_of<const N: usize>(t: &NamedTensor) -> [f64; N] {
    let mut out = [0.0; N];
    for (o, &v) in out.iter_mut().zip(t.data()) {
        *o = v as f64;
    }
    out
}

impl Weights {
    fn from_params(params: &ModelParams) -> Result<Self> {
        Ok(Self {
            w: vec_of(params.expect(W, &[NUM_FEATURES])?),
            b: params.expect(B, &[1])?.data()[0] as f64,
            ws: vec_of(params.expect(W_SCORE, &[NUM_FEATURES])?),
            bs: params.expect(B_SCORE, &[1])?.data()[0] as f64,
        })
    }

    fn logit(&self, f: &[f32]) -> f64 {
        self.b + self.w.iter().zip(f).map(|(w, &v)| w * v as f64).sum::<f64>()
    }

    fn score(&self, means: &[f64; NUM_FEATURES]) -> f64 {
        sigmoid(self.bs + self.ws.iter().zip(means).map(|(w, m)| w * m).sum::<f64>())
    }

    fn probs(&self, features: &FeatureStack) -> Vec<f64> {
        features
            .data
            .chunks_exact(NUM_FEATURES)
            .map(|f| sigmoid(self.logit(f)))
            .collect()
    }
}

fn check_features(features: &FeatureStack, gt: Option<&BinaryMask>) -> Result<()> {
    if features.data.len() != features.pixels() * NUM_FEATURES {
        return Err(Error::Params(format!(
            "feature stack has {} values for {} pixels",
            features.data.len(),
            features.pixels()
        )));
    }
    if let Some(gt) = gt {
        if gt.dims() != (features.width, features.height) {
            return Err(Error::DimensionMismatch {
                left: (features.width, features.height),
                right: gt.dims(),
            });
        }
    }
    Ok(())
}

fn example_loss_grad(wts: &Weights, ex: &TrainExample<'_>, cfg: &LossConfig) -> Result<(f64, Grad)> {
    check_features(ex.features, Some(ex.gt))?;
    let probs = wts.probs(ex.features);
    let gt = ex.gt.data();
    let n = probs.len() as f64;

    let (mut inter, mut psum, mut gsum, mut bce) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &g) in probs.iter().zip(gt) {
        let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let g = g as f64;
        inter += pc * g;
        psum += pc;
        gsum += g;
        bce -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
    }
    bce /= n;
    let num = 2.0 * inter + DICE_SMOOTH;
    let den = psum + gsum + DICE_SMOOTH;
    let dice_loss = 1.0 - num / den;

    let means = ex.features.channel_means();
    let score = wts.score(&means);
    let score_err = score - ex.iou_target;
    let loss = cfg.alpha * dice_loss + (1.0 - cfg.alpha) * bce + cfg.score_weight * score_err * score_err;

    let mut grad = Grad::default();
    for ((&p, &g), f) in probs.iter().zip(gt).zip(ex.features.data.chunks_exact(NUM_FEATURES)) {
        if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
            continue;
        }
        let g = g as f64;
        let d_dice = -(2.0 * g * den - num) / (den * den);
        let d_bce = (-g / p + (1.0 - g) / (1.0 - p)) / n;
        let dz = (cfg.alpha * d_dice + (1.0 - cfg.alpha) * d_bce) * p * (1.0 - p);
        for (gw, &v) in grad.w.iter_mut().zip(f) {
            *gw += dz * v as f64;
        }
        grad.b += dz;
    }
    let du = cfg.score_weight * 2.0 * score_err * score * (1.0 - score);
    for (gw, m) in grad.ws.iter_mut().zip(&means) {
        *gw = du * m;
    }
    grad.bs = du;
    Ok((loss, grad))
}

impl SegmentationModel for ReferenceModel {
    fn manifest(&self) -> Manifest {
        Manifest(vec![
            TensorSpec { name: W.into(), shape: vec![NUM_FEATURES] },
            TensorSpec { name: B.into(), shape: vec![1] },
            TensorSpec { name: W_SCORE.into(), shape: vec![NUM_FEATURES] },
            TensorSpec { name: B_SCORE.into(), shape: vec![1] },
        ])
    }

    fn forward(&self, params: &ModelParams, features: &FeatureStack) -> Result<(ProbMask, f64)> {
        let wts = Weights::from_params(params)?;
        check_features(features, None)?;
        let probs = wts.probs(features).into_iter().map(|p| p as f32).collect();
        let score = wts.score(&features.channel_means());
        Ok((ProbMask::new(features.width, features.height, probs)?, score))
    }

    fn loss_and_gradient(
        &self,
        params: &ModelParams,
        batch: &[TrainExample<'_>],
        loss: &LossConfig,
    ) -> Result<(f64, ModelParams)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let wts = Weights::from_params(params)?;
        let parts: Vec<(f64, Grad)> = batch
            .par_iter()
            .map(|ex| example_loss_grad(&wts, ex, loss))
            .collect::<Result<_>>()?;
        // Fixed-order reduction.
        let mut total = Grad::default();
        let mut loss_sum = 0.0;
        for (l, g) in &parts {
            loss_sum += l;
            total.add(g);
        }
        let m = batch.len() as f64;
        let to_f32 = |v: &[f64]| v.iter().map(|x| (x / m) as f32).collect::<Vec<_>>();
        let grads = ModelParams::new(vec![
            NamedTensor::new(W, vec![NUM_FEATURES], to_f32(&total.w))?,
            NamedTensor::new(B, vec![1], to_f32(&[total.b]))?,
            NamedTensor::new(W_SCORE, vec![NUM_FEATURES], to_f32(&total.ws))?,
            NamedTensor::new(B_SCORE, vec![1], to_f32(&[total.bs]))?,
        ])?;
        // Reorder to the caller's tensor order.
        let ordered = params
            .tensors()
            .iter()
            .filter_map(|t| grads.get(t.name()).cloned())
            .collect();
        Ok((loss_sum / m, ModelParams::new(ordered)?))
    }
}

/// Gradient of the mean batch loss of the reference model.
pub fn gradient(params: &ModelParams, batch: &[TrainExample<'_>], loss: &LossConfig) -> Result<ModelParams> {
    Ok(ReferenceModel.loss_and_gradient(params, batch, loss)?.1)
}

/// Reference-model parameters from plain arrays (mostly for tests and docs).
pub fn reference_params(w: [f32; NUM_FEATURES], b: f32, w_s: [f32; NUM_FEATURES], b_s: f32) -> ModelParams {
    ModelParams::new(vec![
        NamedTensor::new(W, vec![NUM_FEATURES], w.to_vec()).expect("shape"),
        NamedTensor::new(B, vec![1], vec![b]).expect("shape"),
        NamedTensor::new(W_SCORE, vec![NUM_FEATURES], w_s.to_vec()).expect("shape"),
        NamedTensor::new(B_SCORE, vec![1], vec![b_s]).expect("shape"),
    ])
    .expect("unique names")
}
