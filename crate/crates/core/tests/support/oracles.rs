//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's numerical code.

#![allow(dead_code)]

use std::collections::BTreeMap;

use livmap_core::model::params::Tensor;
use livmap_core::model::{backward, forward_train, init_params_with_hidden, Batch, FusionHeadParams};
use livmap_core::{CellId, Split, SquareSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

/// Train-mode loss by plain loops. Returns the loss, predictions and the
/// ReLU on/off pattern of every hidden unit.
pub fn naive_loss(p: &FusionHeadParams, a: &[Vec<f64>], g: &[Vec<f64>], s: &[f64]) -> (f64, Vec<f64>, Vec<bool>) {
    let b = a.len();
    let d = p.dim();
    let h = p.hidden();
    let aw = p.tensor(Tensor::AdapterW);
    let ab = p.tensor(Tensor::AdapterB);
    let mut m = vec![vec![0.0; d]; b];
    for n in 0..b {
        for i in 0..d {
            let mut acc = ab[i];
            for j in 0..d {
                acc += aw[i * d + j] * a[n][j];
            }
            m[n][i] = acc + g[n][i];
        }
    }
    let gamma = p.tensor(Tensor::BnGamma);
    let beta = p.tensor(Tensor::BnBeta);
    let mut h0 = vec![vec![0.0; d]; b];
    for i in 0..d {
        let mean = (0..b).map(|n| m[n][i]).sum::<f64>() / b as f64;
        let var = (0..b).map(|n| (m[n][i] - mean).powi(2)).sum::<f64>() / b as f64;
        for n in 0..b {
            h0[n][i] = gamma[i] * (m[n][i] - mean) / (var + EPS).sqrt() + beta[i];
        }
    }
    let w1 = p.tensor(Tensor::W1);
    let b1 = p.tensor(Tensor::B1);
    let w2 = p.tensor(Tensor::W2);
    let b2 = p.tensor(Tensor::B2)[0];
    let mut preds = Vec::with_capacity(b);
    let mut pattern = Vec::with_capacity(b * h);
    let mut loss = 0.0;
    for n in 0..b {
        let mut out = b2;
        for k in 0..h {
            let mut z = b1[k];
            for i in 0..d {
                z += w1[k * d + i] * h0[n][i];
            }
            pattern.push(z > 0.0);
            out += w2[k] * z.max(0.0);
        }
        preds.push(out);
        loss += (s[n] - out).powi(2);
    }
    (loss / b as f64, preds, pattern)
}

pub struct GradInstance {
    pub params: FusionHeadParams,
    pub aerial: Vec<Vec<f64>>,
    pub ground: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl GradInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let d = rng.random_range(1..=32);
        let h = rng.random_range(2..=12);
        let b = rng.random_range(2..=8);
        let mut params = init_params_with_hidden(d, h, rng.random());
        // move every tensor off its initial value so no gradient term vanishes by symmetry
        for t in Tensor::ALL {
            for v in params.tensor_mut(t) {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let rows = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..b).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
        };
        let aerial = rows(rng);
        let ground = rows(rng);
        let target = (0..b).map(|_| rng.random_range(-3.0..3.0)).collect();
        GradInstance {
            params,
            aerial,
            ground,
            target,
        }
    }

    pub fn batch(&self) -> Batch {
        let to = |r: &[Vec<f64>]| {
            Array2::from_shape_fn((r.len(), r[0].len()), |(i, j)| r[i][j])
        };
        Batch::new(to(&self.aerial), to(&self.ground)).unwrap()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    pub max_abs: f64,
    pub entries: usize,
    /// Largest prediction difference between library forward and oracle.
    pub forward_gap: f64,
}

/// Relative error with a floor on the denominator so entries whose true
/// gradient is zero (e.g. anything that batch norm centres away) compare
/// on an absolute scale.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Smallest per-dimension batch standard deviation of the merged features.
/// Batch norm's curvature grows like the inverse variance, so a central
/// difference with a fixed step is only accurate when this stays away
/// from zero.
pub fn min_batch_std(p: &FusionHeadParams, a: &[Vec<f64>], g: &[Vec<f64>]) -> f64 {
    let (b, d) = (a.len(), p.dim());
    let aw = p.tensor(Tensor::AdapterW);
    let ab = p.tensor(Tensor::AdapterB);
    (0..d)
        .map(|i| {
            let m: Vec<f64> = (0..b)
                .map(|n| ab[i] + (0..d).map(|j| aw[i * d + j] * a[n][j]).sum::<f64>() + g[n][i])
                .collect();
            let mean = m.iter().sum::<f64>() / b as f64;
            (m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b as f64).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

pub const MIN_BATCH_STD: f64 = 0.5;

/// Analytic vs. central finite difference gradients on one instance.
/// Returns `None` when the instance is not fit for a fixed-step difference:
/// a perturbation flips a ReLU (the loss has a kink there) or some batch
/// norm dimension is nearly constant over the batch.
pub fn check_gradients(inst: &GradInstance, step: f64, floor: f64) -> Option<GradCheck> {
    if min_batch_std(&inst.params, &inst.aerial, &inst.ground) < MIN_BATCH_STD {
        return None;
    }
    let (_, oracle_pred, base_pattern) = naive_loss(&inst.params, &inst.aerial, &inst.ground, &inst.target);
    let mut p = inst.params.clone();
    let cache = forward_train(&inst.batch(), &mut p).unwrap();
    let forward_gap = cache
        .predictions()
        .iter()
        .zip(&oracle_pred)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let grads = backward(&cache, &inst.target, &p).unwrap();

    let mut probe = inst.params.clone();
    let (mut max_rel, mut max_abs, mut entries) = (0.0f64, 0.0f64, 0);
    for t in Tensor::ALL {
        for i in 0..probe.tensor(t).len() {
            let orig = probe.tensor(t)[i];
            probe.tensor_mut(t)[i] = orig + step;
            let (lp, _, pp) = naive_loss(&probe, &inst.aerial, &inst.ground, &inst.target);
            probe.tensor_mut(t)[i] = orig - step;
            let (lm, _, pm) = naive_loss(&probe, &inst.aerial, &inst.ground, &inst.target);
            probe.tensor_mut(t)[i] = orig;
            if pp != base_pattern || pm != base_pattern {
                return None;
            }
            let numeric = (lp - lm) / (2.0 * step);
            let analytic = grads.tensor(t)[i];
            max_rel = max_rel.max(rel_err(analytic, numeric, floor));
            max_abs = max_abs.max((analytic - numeric).abs());
            entries += 1;
        }
    }
    Some(GradCheck {
        max_rel,
        max_abs,
        entries,
        forward_gap,
    })
}

/// Draws instances from `seed` until `count` of them are ReLU-stable and
/// checks each. Returns the per-instance results and how many draws were
/// rejected.
pub fn gradient_suite(seed: u64, count: usize, step: f64, floor: f64) -> (Vec<GradCheck>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut rejected = 0;
    while out.len() < count {
        let inst = GradInstance::random(&mut rng);
        match check_gradients(&inst, step, floor) {
            Some(c) => out.push(c),
            None => rejected += 1,
        }
    }
    (out, rejected)
}

/// Pair enumeration: returns `(tau_a, tau_b)` with `tau_b` `None` when its
/// denominator vanishes. The final division uses the same floating-point
/// expression a pair-count based implementation must use.
pub fn kendall_naive(x: &[f64], y: &[f64]) -> (f64, Option<f64>) {
    let n = x.len();
    let (mut s, mut tx, mut ty, mut total) = (0i64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                s += if (dx > 0.0) == (dy > 0.0) { 1 } else { -1 };
            }
        }
    }
    let tau_a = s as f64 / total as f64;
    let (lx, ly) = (total - tx, total - ty);
    let tau_b = (lx != 0 && ly != 0).then(|| s as f64 / (lx as f64 * ly as f64).sqrt());
    (tau_a, tau_b)
}

/// Labels by direct definition: test inside a square, val within `buffer`
/// Chebyshev steps of one, train otherwise.
pub fn split_oracle(cells: &[CellId], squares: &[SquareSpec], buffer: u32) -> BTreeMap<CellId, Split> {
    cells
        .iter()
        .map(|c| {
            let mut best = u32::MAX;
            for sq in squares {
                let dx = if c.cx < sq.origin.cx {
                    sq.origin.cx - c.cx
                } else {
                    c.cx.saturating_sub(sq.origin.cx + sq.side - 1)
                };
                let dy = if c.cy < sq.origin.cy {
                    sq.origin.cy - c.cy
                } else {
                    c.cy.saturating_sub(sq.origin.cy + sq.side - 1)
                };
                best = best.min(dx.max(dy));
            }
            let s = if best == 0 {
                Split::Test
            } else if best <= buffer {
                Split::Val
            } else {
                Split::Train
            };
            (*c, s)
        })
        .collect()
}
