use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Batch5D;
use crate::math;
use crate::rng::SeededRng;

/// Pointwise nonlinearity applied after every batch norm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu { slope } => {
                if v > 0.0 {
                    v
                } else {
                    slope * v
                }
            }
        }
    }

    #[inline]
    fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => (v > 0.0) as u8 as f64,
            Activation::LeakyRelu { slope } => {
                if v > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    pub fn forward(self, x: &Batch5D) -> Batch5D {
        Batch5D::from_raw(x.shape(), x.data().iter().map(|&v| self.apply(v)).collect())
    }

    /// `x` is the forward input.
    pub fn backward(self, x: &Batch5D, grad_out: &Batch5D) -> Batch5D {
        let g = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| g * self.derivative(v)).collect();
        Batch5D::from_raw(x.shape(), g)
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` so inference is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    p: f64,
}

impl Dropout {
    /// Panics unless `p` is in `[0, 1)`; specs validate the range before building.
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability {p} outside [0, 1)");
        Self { p }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Returns the output and the per-element multiplier (empty when nothing was dropped).
    ///
    /// With `p == 0` no random numbers are drawn and the input is passed through untouched.
    pub fn forward_train(&self, x: &Batch5D, rng: &mut SeededRng) -> (Batch5D, Vec<f64>) {
        if self.p == 0.0 {
            return (x.clone(), Vec::new());
        }
        let keep = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..x.len()).map(|_| if rng.uniform() < self.p { 0.0 } else { keep }).collect();
        let y = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        (Batch5D::from_raw(x.shape(), y), mask)
    }

    pub fn backward(&self, mask: &[f64], grad_out: &Batch5D) -> Batch5D {
        if mask.is_empty() {
            return grad_out.clone();
        }
        let g = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
        Batch5D::from_raw(grad_out.shape(), g)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&l| math::exp(l - max)).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

/// Cross-entropy of `softmax(logits)` against `label`, via log-sum-exp.
///
/// Returns the loss and its gradient `softmax - onehot(label)`.
pub fn softmax_crossentropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    assert!(label < logits.len(), "label {label} out of range for {} logits", logits.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| math::exp(l - max)).sum();
    let lse = max + math::ln(sum);
    let loss = lse - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|&l| math::exp(l - lse)).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Mean cross-entropy over a `(batch, classes, 1, 1, 1)` logit tensor.
pub fn batch_crossentropy(logits: &Batch5D, labels: &[usize]) -> (f64, Batch5D) {
    let (b, k) = (logits.batch(), logits.sample_len());
    assert_eq!(b, labels.len());
    let mut total = 0.0;
    let mut grad = vec![0.0; b * k];
    for (s, &label) in labels.iter().enumerate() {
        let (loss, g) = softmax_crossentropy(logits.sample(s), label);
        total += loss;
        for (dst, v) in grad[s * k..(s + 1) * k].iter_mut().zip(g) {
            *dst = v / b as f64;
        }
    }
    (total / b as f64, Batch5D::from_raw(logits.shape(), grad))
}
