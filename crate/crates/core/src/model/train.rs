use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamWConfig, AdamWState};
use super::features::{BaseFeatures, FeatureStack};
use super::params::ModelParams;
use super::prompts::generate_point_prompts;
use super::reference::{SegmentationModel, TrainExample};
use crate::dataset::SamplePair;
use crate::imaging::BinaryMask;
use crate::metrics::{overlap_metrics, LossConfig, RoundMetrics};
use crate::{Error, Result};

/// Local training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub steps_per_epoch: u32,
    pub batch_size: u32,
    pub lr: f64,
    pub weight_decay: f64,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: 9,
            batch_size: 32,
            lr: 1e-5,
            weight_decay: 4e-5,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "epochs, steps and batch size must be >= 1 (got {}, {}, {})",
                self.epochs, self.steps_per_epoch, self.batch_size
            )));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {} is invalid", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!("weight decay {} is negative", self.weight_decay)));
        }
        self.loss.validate()
    }
}

/// Seed for the prompts of one sample in one epoch.
pub fn sample_seed(global: u64, index: usize, epoch: u64) -> u64 {
    splitmix64(global ^ splitmix64(index as u64 ^ splitmix64(epoch.wrapping_add(0x5eed))))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A training sample with its image features precomputed.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub base: BaseFeatures,
    pub mask: BinaryMask,
}

impl PreparedSample {
    pub fn features(&self, index: usize, seed: u64, epoch: u64) -> FeatureStack {
        let prompts = generate_point_prompts(&self.mask, sample_seed(seed, index, epoch));
        self.base.with_prompts(&prompts)
    }
}

pub fn prepare_dataset(dataset: &[SamplePair]) -> Result<Vec<PreparedSample>> {
    dataset
        .par_iter()
        .map(|s| {
            let base = BaseFeatures::from_image(&s.image)?;
            if (base.width, base.height) != s.mask.dims() {
                return Err(Error::DimensionMismatch {
                    left: (base.width, base.height),
                    right: s.mask.dims(),
                });
            }
            Ok(PreparedSample {
                base,
                mask: s.mask.clone(),
            })
        })
        .collect()
}

/// Minibatch AdamW on a local dataset. See [`train_prepared`].
pub fn train_local<M: SegmentationModel>(
    model: &M,
    params: &ModelParams,
    dataset: &[SamplePair],
    cfg: &TrainConfig,
) -> Result<(ModelParams, RoundMetrics)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    train_prepared(model, params, &prepare_dataset(dataset)?, cfg)
}

/// `epochs × steps_per_epoch` AdamW steps. Each epoch reshuffles the data
/// with a generator seeded from `cfg.seed`; step `s` takes the next
/// `batch_size` indices of the permutation, wrapping around. Prompts are
/// regenerated per sample and epoch. The returned metrics average every
/// example seen during the last epoch, measured before each update.
pub fn train_prepared<M: SegmentationModel>(
    model: &M,
    params: &ModelParams,
    data: &[PreparedSample],
    cfg: &TrainConfig,
) -> Result<(ModelParams, RoundMetrics)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len();
    let batch = (cfg.batch_size as usize).min(n);
    let opt = AdamWConfig::new(cfg.lr, cfg.weight_decay);
    let mut params = params.clone();
    let mut state = AdamWState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut acc = RoundMetrics::default();
    let mut seen = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let last_epoch = epoch + 1 == cfg.epochs;
        for step in 0..cfg.steps_per_epoch as usize {
            let idx: Vec<usize> = (0..batch).map(|j| order[(step * batch + j) % n]).collect();
            let prepared: Vec<(FeatureStack, f64, RoundMetrics)> = idx
                .par_iter()
                .map(|&i| {
                    let features = data[i].features(i, cfg.seed, epoch as u64);
                    let (prob, _) = model.forward(&params, &features)?;
                    let overlap = overlap_metrics(&prob.threshold(0.5), &data[i].mask)?;
                    Ok((features, overlap.iou, overlap))
                })
                .collect::<Result<_>>()?;
            let examples: Vec<TrainExample<'_>> = prepared
                .iter()
                .zip(&idx)
                .map(|((features, iou_target, _), &i)| TrainExample {
                    features,
                    gt: &data[i].mask,
                    iou_target: *iou_target,
                })
                .collect();
            let (loss, grads) = model.loss_and_gradient(&params, &examples, &cfg.loss)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite(format!("epoch {epoch} step {step}: loss {loss}")));
            }
            if last_epoch {
                for (_, _, m) in &prepared {
                    acc.iou += m.iou;
                    acc.dice += m.dice;
                    acc.pixel_accuracy += m.pixel_accuracy;
                }
                acc.loss += loss * examples.len() as f64;
                seen += examples.len();
            }
            adamw_step(&mut params, &grads, &mut state, &opt)?;
            if !params.is_finite() {
                return Err(Error::NonFinite(format!("parameters after epoch {epoch} step {step}")));
            }
        }
        debug!("epoch {}/{} done", epoch + 1, cfg.epochs);
    }
    let k = seen as f64;
    let metrics = RoundMetrics {
        loss: acc.loss / k,
        iou: acc.iou / k,
        dice: acc.dice / k,
        pixel_accuracy: acc.pixel_accuracy / k,
    };
    Ok((params, metrics))
}

/// Forward-only metrics over the first `n_samples` items (all items if
/// fewer), prompts drawn as in epoch 0 of training.
pub fn evaluate<M: SegmentationModel>(
    model: &M,
    params: &ModelParams,
    dataset: &[SamplePair],
    n_samples: usize,
    loss: &LossConfig,
    seed: u64,
) -> Result<RoundMetrics> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let take = n_samples.min(dataset.len());
    evaluate_prepared(model, params, &prepare_dataset(&dataset[..take])?, n_samples, loss, seed)
}

pub fn evaluate_prepared<M: SegmentationModel>(
    model: &M,
    params: &ModelParams,
    data: &[PreparedSample],
    n_samples: usize,
    loss: &LossConfig,
    seed: u64,
) -> Result<RoundMetrics> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let take = n_samples.min(data.len());
    let per_sample: Vec<RoundMetrics> = (0..take)
        .into_par_iter()
        .map(|i| {
            let features = data[i].features(i, seed, 0);
            let (prob, _) = model.forward(params, &features)?;
            let mut m = overlap_metrics(&prob.threshold(0.5), &data[i].mask)?;
            let ex = TrainExample {
                features: &features,
                gt: &data[i].mask,
                iou_target: m.iou,
            };
            m.loss = model.loss(params, &[ex], loss)?;
            Ok(m)
        })
        .collect::<Result<_>>()?;
    Ok(RoundMetrics::weighted_average(per_sample.iter().map(|m| (m, 1))).expect("at least one sample"))
}
