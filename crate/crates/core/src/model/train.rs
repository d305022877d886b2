//! Staged minibatch training of the head.
//!
//! The aerial adapter stays frozen for the first `freeze_adapter_epochs`
//! epochs and trains afterwards. The ground path has no parameters.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{adam_step, AdamConfig, AdamState, WeightDecayMode};
use super::head::{backward, forward_eval, forward_train, mse_loss, Batch};
use super::params::{init_params_with_hidden, FusionHeadParams, Tensor, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::eval::metrics::{kendall_tau, rmse, TauVariant};
use crate::features::{Dataset, PatchBundle};
use crate::grid::CellId;
use crate::splits::Split;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub freeze_adapter_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub hidden: usize,
    pub decay_mode: WeightDecayMode,
    pub tau_variant: TauVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            lr: 1e-3,
            weight_decay: 1e-3,
            batch_size: 64,
            freeze_adapter_epochs: 3,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            hidden: DEFAULT_HIDDEN,
            decay_mode: WeightDecayMode::Coupled,
            tau_variant: TauVariant::TauB,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.beta1, self.beta2, self.eps]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive || self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::InvalidInput("lr, betas and eps must be positive (betas < 1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidInput("weight decay must be non-negative".into()));
        }
        if self.batch_size < 2 || self.hidden == 0 {
            return Err(Error::InvalidInput("batch size must be at least 2 and hidden width positive".into()));
        }
        if self.freeze_adapter_epochs > self.epochs {
            return Err(Error::InvalidInput("freeze_adapter_epochs cannot exceed epochs".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            decay_mode: self.decay_mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
    /// NaN when τ is undefined (constant predictions).
    pub val_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_rmse,val_tau\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_rmse, r.val_tau));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Parameters of the epoch with the lowest validation RMSE.
    pub params: FusionHeadParams,
    /// Parameters after the last epoch.
    pub final_params: FusionHeadParams,
    pub best_epoch: Option<usize>,
    pub history: TrainHistory,
}

/// Stacked features of a set of bundles.
#[derive(Debug, Clone)]
pub struct Matrix {
    pub aerial: Array2<f64>,
    pub ground: Array2<f64>,
    pub target: Vec<f64>,
    pub cells: Vec<CellId>,
}

impl Matrix {
    pub fn from_bundles(bundles: &[PatchBundle], dim: usize) -> Result<Self> {
        let n = bundles.len();
        let mut aerial = Array2::zeros((n, dim));
        let mut ground = Array2::zeros((n, dim));
        for (i, b) in bundles.iter().enumerate() {
            if b.aerial.dim() != dim || b.pooled_ground.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: b.aerial.dim().max(b.pooled_ground.dim()),
                });
            }
            aerial.row_mut(i).iter_mut().zip(b.aerial.values()).for_each(|(d, s)| *d = *s);
            ground.row_mut(i).iter_mut().zip(b.pooled_ground.values()).for_each(|(d, s)| *d = *s);
        }
        Ok(Matrix {
            aerial,
            ground,
            target: bundles.iter().map(|b| b.target).collect(),
            cells: bundles.iter().map(|b| b.cell).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            aerial: self.aerial.select(ndarray::Axis(0), idx),
            ground: self.ground.select(ndarray::Axis(0), idx),
        }
    }
}

/// Splits shuffled indices into batches of `size`; a trailing batch of one
/// sample joins the previous batch so batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

pub fn train_model(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let train = Matrix::from_bundles(dataset.split(Split::Train), dataset.dim)?;
    let val = Matrix::from_bundles(dataset.split(Split::Val), dataset.dim)?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    if train.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: train.len(),
        });
    }

    let mut params = init_params_with_hidden(dataset.dim, cfg.hidden, cfg.seed);
    let mut best = params.clone();
    let mut best_rmse = f64::INFINITY;
    let mut best_epoch = None;
    let mut state = AdamState::new();
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        let adapter_frozen = epoch <= cfg.freeze_adapter_epochs;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in batches(&order, cfg.batch_size) {
            let batch = train.batch(idx);
            let target: Vec<f64> = idx.iter().map(|i| train.target[*i]).collect();
            let cache = forward_train(&batch, &mut params)?;
            let loss = mse_loss(cache.predictions().as_slice().unwrap(), &target)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * idx.len() as f64;
            let grads = backward(&cache, &target, &params)?;
            adam_step(&mut params, &grads, &mut state, &adam, |t: Tensor| {
                adapter_frozen && t.is_adapter()
            })
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { epoch },
                other => other,
            })?;
        }
        let train_loss = loss_sum / train.len() as f64;

        let pred = predict_matrix(&params, &val)?;
        let val_rmse = rmse(&pred, &val.target).map_err(|_| Error::Diverged { epoch })?;
        if !val_rmse.is_finite() || !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let val_tau = if val.len() >= 2 {
            kendall_tau(&pred, &val.target, cfg.tau_variant).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_rmse,
            val_tau,
        });
        if val_rmse < best_rmse {
            best_rmse = val_rmse;
            best = params.clone();
            best_epoch = Some(epoch);
        }
    }

    Ok(TrainedModel {
        params: best,
        final_params: params,
        best_epoch,
        history,
    })
}

const PREDICT_CHUNK: usize = 256;

/// Eval-mode predictions for stacked features. Chunks are independent, so
/// the output does not depend on the thread count.
pub fn predict_matrix(params: &FusionHeadParams, m: &Matrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let idx: Vec<usize> = (0..m.len()).collect();
    let parts = idx
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| forward_eval(&m.batch(chunk), params).map(|p| p.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

/// Per-cell predictions for a list of bundles.
pub fn predict(params: &FusionHeadParams, bundles: &[PatchBundle]) -> Result<Vec<(CellId, f64)>> {
    let m = Matrix::from_bundles(bundles, params.dim())?;
    let pred = predict_matrix(params, &m)?;
    Ok(m.cells.into_iter().zip(pred).collect())
}
