//! Forward and backward passes of the regression head.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::params::{FusionHeadParams, Gradients};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A batch of aerial and pooled-ground features (`B × D` each).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub aerial: Array2<f64>,
    pub ground: Array2<f64>,
}

impl Batch {
    pub fn new(aerial: Array2<f64>, ground: Array2<f64>) -> Result<Self> {
        if aerial.dim() != ground.dim() {
            return Err(Error::DimMismatch {
                expected: aerial.ncols(),
                got: ground.ncols(),
            });
        }
        Ok(Batch { aerial, ground })
    }

    pub fn len(&self) -> usize {
        self.aerial.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intermediates kept by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    aerial: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    h0: Array2<f64>,
    z1: Array2<f64>,
    h1: Array2<f64>,
    pred: Array1<f64>,
    revision: u64,
}

impl ForwardCache {
    pub fn predictions(&self) -> &Array1<f64> {
        &self.pred
    }
}

fn check_batch(batch: &Batch, params: &FusionHeadParams, min_rows: usize) -> Result<()> {
    if batch.aerial.ncols() != params.dim() {
        return Err(Error::DimMismatch {
            expected: params.dim(),
            got: batch.aerial.ncols(),
        });
    }
    if batch.len() < min_rows {
        return Err(Error::TooFewSamples {
            needed: min_rows,
            got: batch.len(),
        });
    }
    if batch.aerial.iter().chain(batch.ground.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("batch features"));
    }
    Ok(())
}

/// `m = adapter(a) + ḡ`
fn merged(batch: &Batch, p: &FusionHeadParams) -> Array2<f64> {
    let mut m = batch.aerial.dot(&p.adapter_w.t());
    m += &p.adapter_b;
    m += &batch.ground;
    m
}

fn head_tail(h0: &Array2<f64>, p: &FusionHeadParams) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let mut z1 = h0.dot(&p.w1.t());
    z1 += &p.b1;
    let h1 = z1.mapv(|z| z.max(0.0));
    let pred = h1.dot(&p.w2) + p.b2;
    (z1, h1, pred)
}

/// Eval-mode forward: batch norm uses the running statistics.
pub fn forward_eval(batch: &Batch, p: &FusionHeadParams) -> Result<Array1<f64>> {
    check_batch(batch, p, 1)?;
    let mut h0 = merged(batch, p);
    let scale = Zip::from(&p.bn_running_var)
        .and(&p.bn_gamma)
        .map_collect(|v, g| g / (v + BN_EPS).sqrt());
    let shift = Zip::from(&p.bn_running_mean)
        .and(&scale)
        .and(&p.bn_beta)
        .map_collect(|m, s, b| b - m * s);
    h0 *= &scale;
    h0 += &shift;
    Ok(head_tail(&h0, p).2)
}

/// Train-mode forward: batch statistics normalise the merged features and
/// the running statistics move by [`BN_MOMENTUM`].
pub fn forward_train(batch: &Batch, p: &mut FusionHeadParams) -> Result<ForwardCache> {
    check_batch(batch, p, 2)?;
    let b = batch.len() as f64;
    let m = merged(batch, p);
    let mean = m.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = &m - &mean;
    let var = centered.mapv(|c| c * c).sum_axis(Axis(0)) / b;
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let xhat = &centered * &inv_std;
    let h0 = &xhat * &p.bn_gamma + &p.bn_beta;
    let (z1, h1, pred) = head_tail(&h0, p);

    let unbiased = &var * (b / (b - 1.0));
    p.bn_running_mean = &p.bn_running_mean * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM;
    p.bn_running_var = &p.bn_running_var * (1.0 - BN_MOMENTUM) + &unbiased * BN_MOMENTUM;

    Ok(ForwardCache {
        aerial: batch.aerial.clone(),
        xhat,
        inv_std,
        h0,
        z1,
        h1,
        pred,
        revision: p.revision,
    })
}

/// Mean over the batch of `(s − ŝ)²`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, s)| (s - p) * (s - p)).sum();
    Ok(sum / pred.len() as f64)
}

/// Exact gradients of [`mse_loss`] for the batch cached by [`forward_train`].
pub fn backward(cache: &ForwardCache, target: &[f64], p: &FusionHeadParams) -> Result<Gradients> {
    if cache.revision != p.revision || cache.xhat.ncols() != p.dim() || cache.h1.ncols() != p.hidden() {
        return Err(Error::StaleCache);
    }
    if target.len() != cache.pred.len() {
        return Err(Error::LengthMismatch {
            left: cache.pred.len(),
            right: target.len(),
        });
    }
    let n = cache.pred.len() as f64;
    let target = ArrayView2::from_shape((target.len(), 1), target).expect("column");
    let dpred: Array1<f64> = (&cache.pred - &target.column(0)) * (2.0 / n);

    let w2 = cache.h1.t().dot(&dpred);
    let b2 = dpred.sum();

    // dL/dz1 = (dpred ⊗ w2) masked by the ReLU.
    let mut dz1 = dpred
        .view()
        .into_shape_with_order((dpred.len(), 1))
        .expect("column")
        .dot(&p.w2.view().into_shape_with_order((1, p.hidden())).expect("row"));
    Zip::from(&mut dz1).and(&cache.z1).for_each(|d, z| {
        if *z <= 0.0 {
            *d = 0.0;
        }
    });
    let w1 = dz1.t().dot(&cache.h0);
    let b1 = dz1.sum_axis(Axis(0));

    let dh0 = dz1.dot(&p.w1);
    let bn_gamma = (&dh0 * &cache.xhat).sum_axis(Axis(0));
    let bn_beta = dh0.sum_axis(Axis(0));

    // Batch-norm input gradient including the batch-statistics terms.
    let dxhat = &dh0 * &p.bn_gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let dm = (&dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &(&cache.inv_std / n);

    let adapter_w = dm.t().dot(&cache.aerial);
    let adapter_b = dm.sum_axis(Axis(0));

    Ok(Gradients {
        bn_gamma,
        bn_beta,
        w1,
        b1,
        w2,
        b2,
        adapter_w,
        adapter_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{init_params, init_params_with_hidden};
    use ndarray::array;

    #[test]
    fn constant_head_in_eval_mode() {
        let mut p = init_params(3, 1);
        p.w1.fill(0.0);
        p.w2.fill(0.0);
        p.b2 = 2.5;
        let batch = Batch::new(array![[1.0, -4.0, 9.0], [0.0, 0.0, 0.0]], Array2::ones((2, 3))).unwrap();
        assert_eq!(forward_eval(&batch, &p).unwrap().to_vec(), vec![2.5, 2.5]);
    }

    #[test]
    fn train_mode_normalises_the_batch() {
        let mut p = init_params(4, 2);
        let aerial = array![[1.0, 2.0, -3.0, 10.0], [4.0, 0.5, 3.0, 11.0], [-2.0, 7.0, 0.0, 12.5], [0.3, 1.0, 1.0, 9.0]];
        let batch = Batch::new(aerial, Array2::zeros((4, 4))).unwrap();
        let cache = forward_train(&batch, &mut p).unwrap();
        let mean = cache.h0.mean_axis(Axis(0)).unwrap();
        let var = cache.h0.mapv(|x| x * x).mean_axis(Axis(0)).unwrap() - mean.mapv(|m| m * m);
        assert!(mean.iter().all(|m| m.abs() < 1e-6));
        assert!(var.iter().all(|v| (v - 1.0).abs() < 1e-4));
        // running stats moved away from (0, 1)
        assert!(p.bn_running_mean[3] > 0.9);
    }

    #[test]
    fn single_row_train_batch_is_rejected() {
        let mut p = init_params(2, 0);
        let batch = Batch::new(Array2::zeros((1, 2)), Array2::zeros((1, 2))).unwrap();
        assert!(matches!(forward_train(&batch, &mut p), Err(Error::TooFewSamples { needed: 2, got: 1 })));
        assert!(forward_eval(&batch, &p).is_ok());
        let nan = Batch::new(array![[f64::NAN, 0.0]], Array2::zeros((1, 2))).unwrap();
        assert!(matches!(forward_eval(&nan, &p), Err(Error::NonFinite(_))));
    }

    /// Hand evaluation of every stage on a D = 2, H = 2 head.
    #[test]
    fn matches_hand_evaluation() {
        let mut p = init_params_with_hidden(2, 2, 0);
        p.adapter_w = array![[2.0, 0.0], [1.0, 1.0]];
        p.adapter_b = array![0.5, -1.0];
        p.bn_gamma = array![1.0, 2.0];
        p.bn_beta = array![0.0, 1.0];
        p.w1 = array![[1.0, -1.0], [0.5, 0.5]];
        p.b1 = array![0.0, -1.0];
        p.w2 = array![2.0, -3.0];
        p.b2 = 0.25;
        let batch = Batch::new(array![[1.0, 0.0], [0.0, 2.0]], array![[1.0, 1.0], [-1.0, 3.0]]).unwrap();

        // adapter: [2.5, 0] and [0.5, 1]; merged: [3.5, 1] and [-0.5, 4]
        // batch mean [1.5, 2.5], biased var [4, 2.25]
        let e = BN_EPS;
        let xh = |v: f64, var: f64| v / (var + e).sqrt();
        let h0 = [
            [xh(2.0, 4.0), 2.0 * xh(-1.5, 2.25) + 1.0],
            [xh(-2.0, 4.0), 2.0 * xh(1.5, 2.25) + 1.0],
        ];
        let hand: Vec<f64> = h0
            .iter()
            .map(|h| {
                let z = [h[0] - h[1], 0.5 * h[0] + 0.5 * h[1] - 1.0];
                2.0 * z[0].max(0.0) - 3.0 * z[1].max(0.0) + 0.25
            })
            .collect();
        let cache = forward_train(&batch, &mut p).unwrap();
        for (a, b) in cache.predictions().iter().zip(&hand) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // numbers for the record: first sample ≈ 2·(1 − (−1)) + 0.25
        assert!((hand[0] - 4.25).abs() < 1e-4);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.5], &[0.0]).unwrap(), 0.25);
        assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(matches!(mse_loss(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn zero_output_weights_cut_hidden_gradients() {
        let mut p = init_params(5, 4);
        p.w2.fill(0.0);
        let batch = Batch::new(
            Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64 * 0.37 - 3.0),
            Array2::from_shape_fn((4, 5), |(i, j)| ((i + j) % 3) as f64),
        )
        .unwrap();
        let cache = forward_train(&batch, &mut p).unwrap();
        let g = backward(&cache, &[1.0, 2.0, 3.0, 4.0], &p).unwrap();
        assert!(g.w1.iter().all(|x| *x == 0.0));
        assert!(g.b1.iter().all(|x| *x == 0.0));
        assert!(g.adapter_w.iter().all(|x| *x == 0.0));
        assert!(g.b2 != 0.0);
    }

    #[test]
    fn stale_cache_is_detected() {
        let mut p = init_params(2, 4);
        let batch = Batch::new(array![[1.0, 2.0], [3.0, 1.0]], Array2::zeros((2, 2))).unwrap();
        let cache = forward_train(&batch, &mut p).unwrap();
        assert!(matches!(backward(&cache, &[1.0], &p), Err(Error::LengthMismatch { .. })));
        p.revision += 1;
        assert!(matches!(backward(&cache, &[1.0, 2.0], &p), Err(Error::StaleCache)));
        let other = init_params(3, 4);
        assert!(matches!(backward(&cache, &[1.0, 2.0], &other), Err(Error::StaleCache)));
    }
}
