//! Adam with bias correction and L2 weight decay on weight matrices.

use std::collections::HashMap;

use super::params::{FusionHeadParams, Gradients, Tensor, TensorKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDecayMode {
    /// `g += wd·θ` before the moment updates.
    #[default]
    Coupled,
    /// `θ -= lr·wd·θ` applied separately from the adaptive step.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_mode: WeightDecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_mode: WeightDecayMode::Coupled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// First and second moments per tensor. Each tensor counts its own steps so
/// a tensor that starts training late gets a fresh bias correction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    moments: HashMap<Tensor, Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Largest step count over all tensors.
    pub fn t(&self) -> u64 {
        self.moments.values().map(|m| m.t).max().unwrap_or(0)
    }

    pub fn steps_of(&self, t: Tensor) -> u64 {
        self.moments.get(&t).map_or(0, |m| m.t)
    }

    pub fn first_moment(&self, t: Tensor) -> Option<&[f64]> {
        self.moments.get(&t).map(|m| m.m.as_slice())
    }

    pub fn second_moment(&self, t: Tensor) -> Option<&[f64]> {
        self.moments.get(&t).map(|m| m.v.as_slice())
    }
}

/// One Adam update of every tensor not listed in `frozen`. Frozen tensors
/// keep their values and moments untouched.
pub fn adam_step(
    params: &mut FusionHeadParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
    frozen: impl Fn(Tensor) -> bool,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    for t in Tensor::ALL {
        if frozen(t) {
            continue;
        }
        let g = grads.tensor(t);
        let theta = params.tensor_mut(t);
        if g.len() != theta.len() {
            return Err(Error::DimMismatch {
                expected: theta.len(),
                got: g.len(),
            });
        }
        let mom = state.moments.entry(t).or_insert_with(|| Moments {
            m: vec![0.0; g.len()],
            v: vec![0.0; g.len()],
            t: 0,
        });
        mom.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(mom.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(mom.t as i32);
        let decay = if t.kind() == TensorKind::Weight { cfg.weight_decay } else { 0.0 };
        for i in 0..theta.len() {
            let mut gi = g[i];
            if cfg.decay_mode == WeightDecayMode::Coupled {
                gi += decay * theta[i];
            } else {
                theta[i] -= cfg.lr * decay * theta[i];
            }
            mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * gi;
            mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = mom.m[i] / bc1;
            let v_hat = mom.v[i] / bc2;
            theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    params.revision += 1;
    Ok(())
}
