//! Adam with bias correction and global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::model::Parameters;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0) }
    }
}

/// First/second moment buffers, aligned with the canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: usize,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let m = params.named().iter().map(|(_, t)| vec![0.0; t.numel()]).collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, step: 0 }
    }
}

/// One update from the gradients stored on `params`. Returns the pre-clip
/// global gradient norm.
pub fn adam_step(params: &mut Parameters, state: &mut AdamState, cfg: &AdamConfig) -> Result<f64> {
    let mut sq_norm = 0.0;
    for (name, t) in params.named() {
        let g = t.grad().ok_or_else(|| {
            Error::Contract(format!("adam_step: no gradient on '{name}'"))
        })?;
        sq_norm += g.iter().map(|v| v * v).sum::<f64>();
    }
    let norm = sq_norm.sqrt();
    let clip_scale = match cfg.clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for (slot, (_, tensor)) in params.named_mut().into_iter().enumerate() {
        let g: Vec<f64> =
            tensor.grad().expect("checked above").iter().map(|v| v * clip_scale).collect();
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        let data = tensor.data_mut();
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(norm)
}
