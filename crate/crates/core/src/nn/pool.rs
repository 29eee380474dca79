use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Batch5D;
use crate::volume::Dims;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    #[default]
    Max,
    Mean,
}

/// Non-overlapping cubic pooling with stride equal to the window.
///
/// Output dims are `floor(n / size)`; trailing partial windows are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool3d {
    pub size: usize,
    pub kind: PoolKind,
}

impl Pool3d {
    pub fn new(size: usize, kind: PoolKind) -> Self {
        assert!(size >= 1, "pool size must be positive");
        Self { size, kind }
    }

    pub fn output_dims(&self, d: Dims) -> Dims {
        Dims::new(d.nx / self.size, d.ny / self.size, d.nz / self.size)
    }

    /// Returns the pooled batch and, for max pooling, the flat input index of
    /// each output's maximum (first in scan order on ties).
    pub fn forward(&self, x: &Batch5D) -> (Batch5D, Vec<usize>) {
        let [b, c, ..] = x.shape();
        let (din, dout) = (x.spatial(), self.output_dims(x.spatial()));
        let k = self.size;
        let planes = b * c;
        let mut y = vec![0.0; planes * dout.len()];
        let mut argmax = match self.kind {
            PoolKind::Max => vec![0usize; y.len()],
            PoolKind::Mean => Vec::new(),
        };
        let inv = 1.0 / (k * k * k) as f64;
        for p in 0..planes {
            let base = p * din.len();
            for ox in 0..dout.nx {
                for oy in 0..dout.ny {
                    for oz in 0..dout.nz {
                        let o = p * dout.len() + dout.index(ox, oy, oz);
                        let (mut best, mut best_at, mut sum) = (f64::NEG_INFINITY, 0, 0.0);
                        for ix in ox * k..(ox + 1) * k {
                            for iy in oy * k..(oy + 1) * k {
                                let row = base + din.index(ix, iy, oz * k);
                                for (j, &v) in x.data()[row..row + k].iter().enumerate() {
                                    sum += v;
                                    if v > best {
                                        best = v;
                                        best_at = row + j;
                                    }
                                }
                            }
                        }
                        match self.kind {
                            PoolKind::Max => {
                                y[o] = best;
                                argmax[o] = best_at;
                            }
                            PoolKind::Mean => y[o] = sum * inv,
                        }
                    }
                }
            }
        }
        let shape = [b, c, dout.nx, dout.ny, dout.nz];
        (Batch5D::from_raw(shape, y), argmax)
    }

    pub fn backward(&self, input_shape: [usize; 5], argmax: &[usize], grad_out: &Batch5D) -> Batch5D {
        let mut gx = Batch5D::zeros(input_shape);
        match self.kind {
            PoolKind::Max => {
                for (&at, &g) in argmax.iter().zip(grad_out.data()) {
                    gx.data_mut()[at] += g;
                }
            }
            PoolKind::Mean => {
                let din = Dims::new(input_shape[2], input_shape[3], input_shape[4]);
                let dout = grad_out.spatial();
                let k = self.size;
                let inv = 1.0 / (k * k * k) as f64;
                let planes = input_shape[0] * input_shape[1];
                for p in 0..planes {
                    for ox in 0..dout.nx {
                        for oy in 0..dout.ny {
                            for oz in 0..dout.nz {
                                let g = grad_out.data()[p * dout.len() + dout.index(ox, oy, oz)] * inv;
                                for ix in ox * k..(ox + 1) * k {
                                    for iy in oy * k..(oy + 1) * k {
                                        let row = p * din.len() + din.index(ix, iy, oz * k);
                                        gx.data_mut()[row..row + k].iter_mut().for_each(|v| *v += g);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_gives_constant_output() {
        let x = Batch5D::new([2, 3, 7, 5, 9], vec![1.5; 2 * 3 * 7 * 5 * 9]).unwrap();
        for kind in [PoolKind::Max, PoolKind::Mean] {
            let (y, _) = Pool3d::new(2, kind).forward(&x);
            assert_eq!(y.shape(), [2, 3, 3, 2, 4]);
            assert!(y.data().iter().all(|v| *v == 1.5));
        }
    }

    #[test]
    fn paper_dims_chain() {
        let mut d = Dims::new(96, 96, 73);
        let mut chain = alloc::vec::Vec::new();
        for k in [4, 3, 2, 2] {
            d = Pool3d::new(k, PoolKind::Max).output_dims(d);
            chain.push(d.as_array());
        }
        assert_eq!(chain, [[24, 24, 18], [8, 8, 6], [4, 4, 3], [2, 2, 1]]);
    }

    #[test]
    fn gradient_routes_to_single_maximum() {
        let mut x = Batch5D::zeros([1, 1, 4, 4, 4]);
        x.data_mut()[37] = 5.0;
        let pool = Pool3d::new(4, PoolKind::Max);
        let (y, argmax) = pool.forward(&x);
        assert_eq!(y.data(), &[5.0]);
        let g = pool.backward(x.shape(), &argmax, &Batch5D::new([1, 1, 1, 1, 1], vec![2.5]).unwrap());
        for (i, v) in g.data().iter().enumerate() {
            assert_eq!(*v, if i == 37 { 2.5 } else { 0.0 });
        }
    }

    #[test]
    fn window_larger_than_input_is_empty() {
        let (y, _) = Pool3d::new(3, PoolKind::Max).forward(&Batch5D::zeros([1, 2, 2, 5, 5]));
        assert_eq!(y.shape(), [1, 2, 0, 1, 1]);
        assert!(y.is_empty());
    }
}
