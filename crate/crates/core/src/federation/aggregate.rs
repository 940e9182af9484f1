use std::path::{Path, PathBuf};

use log::{info, warn};

use super::ClientUpdate;
use crate::metrics::RoundMetrics;
use crate::model::{save_checkpoint, Manifest, ModelParams, NamedTensor};
use crate::{Error, Result};

/// Sample-weighted federated average, `θ = Σ n_k·θ_k / n`, accumulated in
/// f64 in the order given. Returns `None` for an empty round.
pub fn aggregate_fit(round: u32, updates: &[ClientUpdate]) -> Result<Option<(ModelParams, RoundMetrics)>> {
    let Some(first) = updates.first() else {
        warn!("round {round}: no client updates to aggregate");
        return Ok(None);
    };
    let manifest = first.params.manifest();
    for (k, u) in updates.iter().enumerate() {
        if u.num_samples == 0 {
            return Err(Error::Federation(format!("round {round}: update {k} reports zero samples")));
        }
        if u.params.manifest() != manifest {
            return Err(Error::Federation(format!("round {round}: update {k} has a different tensor manifest")));
        }
    }
    let total: u64 = updates.iter().map(|u| u.num_samples).sum();
    let n = total as f64;
    let mut tensors = Vec::with_capacity(manifest.0.len());
    for (ti, spec) in manifest.0.iter().enumerate() {
        let mut acc = vec![0.0f64; spec.shape.iter().product()];
        for u in updates {
            let w = u.num_samples as f64;
            for (a, &v) in acc.iter_mut().zip(u.params.tensors()[ti].data()) {
                *a += w * v as f64;
            }
        }
        let data = acc.into_iter().map(|a| (a / n) as f32).collect();
        tensors.push(NamedTensor::new(spec.name.clone(), spec.shape.clone(), data)?);
    }
    let metrics = RoundMetrics::weighted_average(updates.iter().map(|u| (&u.metrics, u.num_samples)))
        .expect("non-empty updates");
    info!(
        "round {round}: aggregated {} clients ({total} samples): loss {:.4} iou {:.4} acc {:.4} dice {:.4}",
        updates.len(),
        metrics.loss,
        metrics.iou,
        metrics.pixel_accuracy,
        metrics.dice
    );
    Ok(Some((ModelParams::new(tensors)?, metrics)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SavedModel {
    pub path: PathBuf,
    /// Tensors dropped because their name or shape is not in the manifest.
    pub excluded: Vec<String>,
}

pub fn checkpoint_name(round: u32) -> String {
    format!("federated_round_{round}.fp")
}

/// Writes `save_dir/federated_round_<round>.fp` with only the tensors that
/// match `manifest` by name and shape, in the order they appear in
/// `params`.
pub fn save_aggregated_model(save_dir: &Path, round: u32, params: &ModelParams, manifest: &Manifest) -> Result<SavedModel> {
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for t in params.tensors() {
        match manifest.find(t.name()) {
            Some(spec) if spec.shape == t.shape() => kept.push(t.clone()),
            _ => excluded.push(t.name().to_string()),
        }
    }
    if !excluded.is_empty() {
        warn!("round {round}: excluding tensors not in the model manifest: {}", excluded.join(", "));
    }
    std::fs::create_dir_all(save_dir).map_err(|e| Error::io(format!("creating {}", save_dir.display()), e))?;
    let path = save_dir.join(checkpoint_name(round));
    save_checkpoint(&ModelParams::new(kept)?, &path)?;
    Ok(SavedModel { path, excluded })
}
