use ndarray::{Array1, Array2};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_HIDDEN: usize = 100;

/// Trainable tensors of the head, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tensor {
    BnGamma,
    BnBeta,
    W1,
    B1,
    W2,
    B2,
    AdapterW,
    AdapterB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    Norm,
}

impl Tensor {
    pub const ALL: [Tensor; 8] = [
        Tensor::BnGamma,
        Tensor::BnBeta,
        Tensor::W1,
        Tensor::B1,
        Tensor::W2,
        Tensor::B2,
        Tensor::AdapterW,
        Tensor::AdapterB,
    ];

    pub fn kind(self) -> TensorKind {
        match self {
            Tensor::W1 | Tensor::W2 | Tensor::AdapterW => TensorKind::Weight,
            Tensor::B1 | Tensor::B2 | Tensor::AdapterB => TensorKind::Bias,
            Tensor::BnGamma | Tensor::BnBeta => TensorKind::Norm,
        }
    }

    pub fn is_adapter(self) -> bool {
        matches!(self, Tensor::AdapterW | Tensor::AdapterB)
    }

    pub fn name(self) -> &'static str {
        match self {
            Tensor::BnGamma => "bn_gamma",
            Tensor::BnBeta => "bn_beta",
            Tensor::W1 => "w1",
            Tensor::B1 => "b1",
            Tensor::W2 => "w2",
            Tensor::B2 => "b2",
            Tensor::AdapterW => "adapter_w",
            Tensor::AdapterB => "adapter_b",
        }
    }
}

/// Full state of the regression head: batch norm over the merged feature,
/// FC(D→H) with ReLU, FC(H→1), and an identity-initialised affine adapter
/// applied to the aerial feature before fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHeadParams {
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
    pub bn_running_mean: Array1<f64>,
    pub bn_running_var: Array1<f64>,
    /// `H × D`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// Output weights (the single row of the `1 × H` matrix).
    pub w2: Array1<f64>,
    pub b2: f64,
    /// `D × D`
    pub adapter_w: Array2<f64>,
    pub adapter_b: Array1<f64>,
    pub(crate) revision: u64,
}

impl FusionHeadParams {
    pub fn dim(&self) -> usize {
        self.bn_gamma.len()
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn adapter_is_identity(&self) -> bool {
        self.adapter_b.iter().all(|b| *b == 0.0)
            && self
                .adapter_w
                .indexed_iter()
                .all(|((i, j), w)| *w == if i == j { 1.0 } else { 0.0 })
    }

    /// Frobenius distance of the adapter (weights and bias) from identity.
    pub fn adapter_distance_from_identity(&self) -> f64 {
        let w: f64 = self
            .adapter_w
            .indexed_iter()
            .map(|((i, j), w)| {
                let d = w - if i == j { 1.0 } else { 0.0 };
                d * d
            })
            .sum();
        let b: f64 = self.adapter_b.iter().map(|b| b * b).sum();
        (w + b).sqrt()
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        match t {
            Tensor::BnGamma => self.bn_gamma.as_slice().unwrap(),
            Tensor::BnBeta => self.bn_beta.as_slice().unwrap(),
            Tensor::W1 => self.w1.as_slice().unwrap(),
            Tensor::B1 => self.b1.as_slice().unwrap(),
            Tensor::W2 => self.w2.as_slice().unwrap(),
            Tensor::B2 => std::slice::from_ref(&self.b2),
            Tensor::AdapterW => self.adapter_w.as_slice().unwrap(),
            Tensor::AdapterB => self.adapter_b.as_slice().unwrap(),
        }
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        match t {
            Tensor::BnGamma => self.bn_gamma.as_slice_mut().unwrap(),
            Tensor::BnBeta => self.bn_beta.as_slice_mut().unwrap(),
            Tensor::W1 => self.w1.as_slice_mut().unwrap(),
            Tensor::B1 => self.b1.as_slice_mut().unwrap(),
            Tensor::W2 => self.w2.as_slice_mut().unwrap(),
            Tensor::B2 => std::slice::from_mut(&mut self.b2),
            Tensor::AdapterW => self.adapter_w.as_slice_mut().unwrap(),
            Tensor::AdapterB => self.adapter_b.as_slice_mut().unwrap(),
        }
    }

    pub fn is_finite(&self) -> bool {
        Tensor::ALL
            .iter()
            .all(|t| self.tensor(*t).iter().all(|v| v.is_finite()))
            && self.bn_running_mean.iter().all(|v| v.is_finite())
            && self.bn_running_var.iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

/// Fresh parameters: unit batch-norm affine and running stats, FC weights
/// uniform in `±sqrt(6 / fan_in)`, zero biases, identity adapter.
pub fn init_params(dim: usize, seed: u64) -> FusionHeadParams {
    init_params_with_hidden(dim, DEFAULT_HIDDEN, seed)
}

pub fn init_params_with_hidden(dim: usize, hidden: usize, seed: u64) -> FusionHeadParams {
    assert!(dim >= 1 && hidden >= 1, "head dimensions must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kaiming = |rows: usize, cols: usize| {
        let bound = (6.0 / cols as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut rng))
    };
    let w1 = kaiming(hidden, dim);
    let w2 = kaiming(1, hidden).into_shape_with_order(hidden).expect("row vector");
    FusionHeadParams {
        bn_gamma: Array1::ones(dim),
        bn_beta: Array1::zeros(dim),
        bn_running_mean: Array1::zeros(dim),
        bn_running_var: Array1::ones(dim),
        w1,
        b1: Array1::zeros(hidden),
        w2,
        b2: 0.0,
        adapter_w: Array2::eye(dim),
        adapter_b: Array1::zeros(dim),
        revision: 0,
    }
}

/// Gradients for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
    pub adapter_w: Array2<f64>,
    pub adapter_b: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &FusionHeadParams) -> Self {
        Gradients {
            bn_gamma: Array1::zeros(p.dim()),
            bn_beta: Array1::zeros(p.dim()),
            w1: Array2::zeros(p.w1.raw_dim()),
            b1: Array1::zeros(p.hidden()),
            w2: Array1::zeros(p.hidden()),
            b2: 0.0,
            adapter_w: Array2::zeros(p.adapter_w.raw_dim()),
            adapter_b: Array1::zeros(p.dim()),
        }
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        match t {
            Tensor::BnGamma => self.bn_gamma.as_slice().unwrap(),
            Tensor::BnBeta => self.bn_beta.as_slice().unwrap(),
            Tensor::W1 => self.w1.as_slice().unwrap(),
            Tensor::B1 => self.b1.as_slice().unwrap(),
            Tensor::W2 => self.w2.as_slice().unwrap(),
            Tensor::B2 => std::slice::from_ref(&self.b2),
            Tensor::AdapterW => self.adapter_w.as_slice().unwrap(),
            Tensor::AdapterB => self.adapter_b.as_slice().unwrap(),
        }
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        match t {
            Tensor::BnGamma => self.bn_gamma.as_slice_mut().unwrap(),
            Tensor::BnBeta => self.bn_beta.as_slice_mut().unwrap(),
            Tensor::W1 => self.w1.as_slice_mut().unwrap(),
            Tensor::B1 => self.b1.as_slice_mut().unwrap(),
            Tensor::W2 => self.w2.as_slice_mut().unwrap(),
            Tensor::B2 => std::slice::from_mut(&mut self.b2),
            Tensor::AdapterW => self.adapter_w.as_slice_mut().unwrap(),
            Tensor::AdapterB => self.adapter_b.as_slice_mut().unwrap(),
        }
    }

    pub fn is_finite(&self) -> bool {
        Tensor::ALL.iter().all(|t| self.tensor(*t).iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let a = init_params(16, 9);
        let b = init_params(16, 9);
        for t in Tensor::ALL {
            let (x, y) = (a.tensor(t), b.tensor(t));
            assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_ne!(init_params(16, 10).w1, a.w1);
    }

    #[test]
    fn init_shapes_and_bounds() {
        let p = init_params(8, 1);
        assert_eq!(p.w1.dim(), (100, 8));
        assert_eq!(p.w2.len(), 100);
        assert!(p.adapter_is_identity());
        assert_eq!(p.adapter_distance_from_identity(), 0.0);
        let b1 = (6.0f64 / 8.0).sqrt();
        assert!(p.w1.iter().all(|w| w.abs() <= b1));
        let b2 = (6.0f64 / 100.0).sqrt();
        assert!(p.w2.iter().all(|w| w.abs() <= b2));
        assert!(p.bn_running_var.iter().all(|v| *v == 1.0));
        assert!(p.is_finite());
    }

    #[test]
    fn one_dimensional_head_is_valid() {
        let p = init_params(1, 3);
        assert_eq!(p.w1.dim(), (100, 1));
        assert_eq!(p.adapter_w.dim(), (1, 1));
        assert!(p.adapter_is_identity());
    }
}
