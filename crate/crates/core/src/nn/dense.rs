use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Batch5D;
use crate::error::{Error, Result};

/// Fully connected layer on flattened samples. `weights` is `(out, in)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    in_features: usize,
    out_features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub input: Batch5D,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weights: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    pub fn from_parts(in_features: usize, out_features: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != in_features * out_features || bias.len() != out_features {
            return Err(Error::ShapeMismatch(format!(
                "dense {in_features}->{out_features} with {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self { in_features, out_features, weights, bias })
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    fn check(&self, x: &Batch5D) -> Result<()> {
        if x.sample_len() != self.in_features {
            return Err(Error::ShapeMismatch(format!(
                "dense expects {} features, got {}",
                self.in_features,
                x.sample_len()
            )));
        }
        Ok(())
    }

    /// Output shape is `(batch, out, 1, 1, 1)`.
    pub fn forward(&self, x: &Batch5D) -> Result<Batch5D> {
        self.check(x)?;
        let b = x.batch();
        let mut y = Vec::with_capacity(b * self.out_features);
        for s in 0..b {
            let xs = x.sample(s);
            for o in 0..self.out_features {
                let row = &self.weights[o * self.in_features..(o + 1) * self.in_features];
                y.push(self.bias[o] + row.iter().zip(xs).map(|(w, v)| w * v).sum::<f64>());
            }
        }
        Ok(Batch5D::from_raw([b, self.out_features, 1, 1, 1], y))
    }

    pub fn backward(&self, x: &Batch5D, grad_out: &Batch5D) -> Result<DenseGrads> {
        self.check(x)?;
        let b = x.batch();
        if grad_out.shape() != [b, self.out_features, 1, 1, 1] {
            return Err(Error::ShapeMismatch(format!("dense grad_out shape {:?}", grad_out.shape())));
        }
        let n = self.in_features;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.out_features];
        let mut gx = vec![0.0; x.len()];
        for s in 0..b {
            let xs = x.sample(s);
            let gs = grad_out.sample(s);
            let gxs = &mut gx[s * n..(s + 1) * n];
            for (o, &g) in gs.iter().enumerate() {
                gb[o] += g;
                let row = &self.weights[o * n..(o + 1) * n];
                for ((gw, gx), (&w, &v)) in gw[o * n..(o + 1) * n].iter_mut().zip(gxs.iter_mut()).zip(row.iter().zip(xs)) {
                    *gw += g * v;
                    *gx += g * w;
                }
            }
        }
        Ok(DenseGrads { input: Batch5D::from_raw(x.shape(), gx), weights: gw, bias: gb })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_bias() {
        let mut d = Dense::zeros(5, 2);
        d.bias = vec![0.25, -3.0];
        let x = Batch5D::new([2, 5, 1, 1, 1], (0..10).map(|i| i as f64).collect()).unwrap();
        assert_eq!(d.forward(&x).unwrap().data(), &[0.25, -3.0, 0.25, -3.0]);
    }

    #[test]
    fn identity_weights_copy_features() {
        let d = Dense::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 2.0]).unwrap();
        let x = Batch5D::new([1, 2, 1, 1, 1], vec![-4.0, 7.5]).unwrap();
        assert_eq!(d.forward(&x).unwrap().data(), &[-3.0, 9.5]);
    }

    #[test]
    fn feature_count_mismatch() {
        let d = Dense::zeros(3, 2);
        assert!(matches!(d.forward(&Batch5D::zeros([1, 4, 1, 1, 1])), Err(Error::ShapeMismatch(_))));
    }
}
