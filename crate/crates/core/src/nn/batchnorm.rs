use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Batch5D;
use crate::error::{Error, Result};
use crate::math;

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-channel batch normalization over `(batch, x, y, z)`.
///
/// Train mode normalizes with the biased batch variance and folds the
/// unbiased variance into the running estimate:
/// `running = (1 - momentum) * running + momentum * batch`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm3d {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Batch statistics saved by a train-mode forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnGrads {
    pub input: Batch5D,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm3d {
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Batch5D) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm over {} channels got {}",
                self.channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, x: &Batch5D) -> Result<(Batch5D, BnCache)> {
        self.check(x)?;
        let (b, c, vox) = (x.batch(), x.channels(), x.spatial().len());
        let n = b * vox;
        if n < 2 {
            return Err(Error::DegenerateBatch(format!("{n} value(s) per channel in train mode")));
        }
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let sum: f64 = (0..b).map(|s| channel(x, s, ch).iter().sum::<f64>()).sum();
            let m = sum / n as f64;
            let ss: f64 = (0..b).map(|s| channel(x, s, ch).iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sum();
            mean[ch] = m;
            var[ch] = ss / n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + self.epsilon)).collect();
        if inv_std.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateBatch("non-finite batch statistics".into()));
        }
        let y = self.apply(x, &mean, &inv_std);
        let unbias = n as f64 / (n - 1) as f64;
        for ch in 0..c {
            let m = self.momentum;
            self.running_mean[ch] = (1.0 - m) * self.running_mean[ch] + m * mean[ch];
            self.running_var[ch] = (1.0 - m) * self.running_var[ch] + m * var[ch] * unbias;
        }
        Ok((y, BnCache { mean, inv_std }))
    }

    pub fn forward_infer(&self, x: &Batch5D) -> Result<Batch5D> {
        self.check(x)?;
        Ok(self.apply(x, &self.running_mean, &self.infer_inv_std()))
    }

    fn infer_inv_std(&self) -> Vec<f64> {
        self.running_var.iter().map(|v| 1.0 / math::sqrt(v + self.epsilon)).collect()
    }

    fn apply(&self, x: &Batch5D, mean: &[f64], inv_std: &[f64]) -> Batch5D {
        let (b, c, vox) = (x.batch(), x.channels(), x.spatial().len());
        let mut y = vec![0.0; x.len()];
        for s in 0..b {
            for ch in 0..c {
                let (scale, m, shift) = (self.gamma[ch] * inv_std[ch], mean[ch], self.beta[ch]);
                let at = (s * c + ch) * vox;
                for (dst, v) in y[at..at + vox].iter_mut().zip(&x.data()[at..at + vox]) {
                    *dst = (v - m) * scale + shift;
                }
            }
        }
        Batch5D::from_raw(x.shape(), y)
    }

    /// Gradients through a train-mode pass (batch statistics depend on `x`).
    pub fn backward_train(&self, x: &Batch5D, cache: &BnCache, grad_out: &Batch5D) -> BnGrads {
        let (b, c, vox) = (x.batch(), x.channels(), x.spatial().len());
        let n = (b * vox) as f64;
        let mut gx = vec![0.0; x.len()];
        let mut gg = vec![0.0; c];
        let mut gb = vec![0.0; c];
        for ch in 0..c {
            let (m, is) = (cache.mean[ch], cache.inv_std[ch]);
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for s in 0..b {
                for (g, v) in channel(grad_out, s, ch).iter().zip(channel(x, s, ch)) {
                    sum_g += g;
                    sum_gx += g * (v - m) * is;
                }
            }
            gg[ch] = sum_gx;
            gb[ch] = sum_g;
            // dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))
            let k = self.gamma[ch] * is;
            let (mg, mgx) = (sum_g / n, sum_gx / n);
            for s in 0..b {
                let at = (s * c + ch) * vox;
                for i in at..at + vox {
                    let xhat = (x.data()[i] - m) * is;
                    gx[i] = k * (grad_out.data()[i] - mg - xhat * mgx);
                }
            }
        }
        BnGrads { input: Batch5D::from_raw(x.shape(), gx), gamma: gg, beta: gb }
    }

    /// Gradients through an infer-mode pass (running statistics are constants).
    pub fn backward_infer(&self, x: &Batch5D, grad_out: &Batch5D) -> BnGrads {
        let (b, c, vox) = (x.batch(), x.channels(), x.spatial().len());
        let inv_std = self.infer_inv_std();
        let mut gx = vec![0.0; x.len()];
        let mut gg = vec![0.0; c];
        let mut gb = vec![0.0; c];
        for s in 0..b {
            for ch in 0..c {
                let at = (s * c + ch) * vox;
                for i in at..at + vox {
                    let g = grad_out.data()[i];
                    gg[ch] += g * (x.data()[i] - self.running_mean[ch]) * inv_std[ch];
                    gb[ch] += g;
                    gx[i] = g * self.gamma[ch] * inv_std[ch];
                }
            }
        }
        BnGrads { input: Batch5D::from_raw(x.shape(), gx), gamma: gg, beta: gb }
    }
}

fn channel(x: &Batch5D, s: usize, ch: usize) -> &[f64] {
    let vox = x.spatial().len();
    let at = (s * x.channels() + ch) * vox;
    &x.data()[at..at + vox]
}
