use super::params::ModelParams;
use crate::{Error, Result};

/// Moment estimates of decoupled-weight-decay Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One AdamW update, in place.
///
/// `θ ← θ·(1 - lr·λ)` is applied first, then
/// `θ ← θ - lr·m̂/(√v̂ + ε)` with bias-corrected moments.
pub fn adamw_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamWState, cfg: &AdamWConfig) -> Result<()> {
    if params.manifest() != grads.manifest() {
        return Err(Error::Params("gradient manifest differs from parameters".into()));
    }
    if state.m.len() != params.tensors().len()
        || state.m.iter().zip(params.tensors()).any(|(m, t)| m.len() != t.len())
    {
        return Err(Error::Params("optimizer state does not match parameters".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads.tensors()).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (theta, &grad)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let grad = grad as f64;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * grad;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * grad * grad;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            let decayed = *theta as f64 * decay;
            *theta = (decayed - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps)) as f32;
        }
    }
    Ok(())
}
