use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, PaddedGeometry};
use super::Batch5D;
use crate::error::{Error, Result};

/// Number of taps in a 3x3x3 kernel.
pub const KERNEL_TAPS: usize = 27;

/// Stride-1, zero-padded ("same") 3x3x3 convolution.
///
/// `weights` is laid out `(out_channels, in_channels, 3, 3, 3)`; the tap
/// `(kx, ky, kz)` reads input voxel `(x+kx-1, y+ky-1, z+kz-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d {
    in_channels: usize,
    out_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a [`Conv3d`] forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    /// `None` when the caller did not ask for it (first layer of a network).
    pub input: Option<Batch5D>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3d {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: vec![0.0; out_channels * in_channels * KERNEL_TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn from_parts(in_channels: usize, out_channels: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != out_channels * in_channels * KERNEL_TAPS || bias.len() != out_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv {in_channels}->{out_channels} with {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self { in_channels, out_channels, weights, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weight_index(&self, o: usize, c: usize, kx: usize, ky: usize, kz: usize) -> usize {
        ((o * self.in_channels + c) * 3 + kx) * 9 + ky * 3 + kz
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check_input(&self, x: &Batch5D) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Batch5D) -> Result<Batch5D> {
        self.check_input(x)?;
        let [b, _, nx, ny, nz] = x.shape();
        let geo = PaddedGeometry::new(x.spatial());
        let mut padded_in = geo.alloc(self.in_channels);
        let mut padded_out = geo.alloc(self.out_channels);
        let out_len = self.out_channels * geo.dims.len();
        let mut out = vec![0.0; b * out_len];
        for s in 0..b {
            geo.pad_into(x.sample(s), self.in_channels, &mut padded_in);
            kernels::correlate(
                &geo,
                &padded_in,
                self.in_channels,
                &self.weights,
                Some(&self.bias),
                self.out_channels,
                &mut padded_out,
            );
            geo.unpad_into(&padded_out, self.out_channels, &mut out[s * out_len..(s + 1) * out_len], false);
        }
        Ok(Batch5D::from_raw([b, self.out_channels, nx, ny, nz], out))
    }

    /// Exact gradients of [`Conv3d::forward`] at `x` given `grad_out`.
    pub fn backward(&self, x: &Batch5D, grad_out: &Batch5D, need_input_grad: bool) -> Result<ConvGrads> {
        self.check_input(x)?;
        let [b, _, nx, ny, nz] = x.shape();
        if grad_out.shape() != [b, self.out_channels, nx, ny, nz] {
            return Err(Error::ShapeMismatch(format!(
                "conv grad_out shape {:?}, expected {:?}",
                grad_out.shape(),
                [b, self.out_channels, nx, ny, nz]
            )));
        }
        let geo = PaddedGeometry::new(x.spatial());
        let vox = geo.dims.len();
        let mut grad_w = vec![0.0; self.weights.len()];
        let mut grad_b = vec![0.0; self.out_channels];
        let mut padded_in = geo.alloc(self.in_channels);
        let mut padded_gout = geo.alloc(self.out_channels);
        let mut padded_gin = if need_input_grad { geo.alloc(self.in_channels) } else { Vec::new() };
        let flipped = if need_input_grad {
            kernels::transpose_flip(&self.weights, self.out_channels, self.in_channels)
        } else {
            Vec::new()
        };
        let in_len = self.in_channels * vox;
        let mut grad_in = if need_input_grad { vec![0.0; b * in_len] } else { Vec::new() };

        for s in 0..b {
            let g = grad_out.sample(s);
            for (o, gb) in grad_b.iter_mut().enumerate() {
                *gb += g[o * vox..(o + 1) * vox].iter().sum::<f64>();
            }
            geo.pad_into(x.sample(s), self.in_channels, &mut padded_in);
            geo.pad_into(g, self.out_channels, &mut padded_gout);
            kernels::weight_gradient(&geo, &padded_in, self.in_channels, &padded_gout, self.out_channels, &mut grad_w);
            if need_input_grad {
                kernels::correlate(&geo, &padded_gout, self.out_channels, &flipped, None, self.in_channels, &mut padded_gin);
                geo.unpad_into(&padded_gin, self.in_channels, &mut grad_in[s * in_len..(s + 1) * in_len], false);
            }
        }
        let input = need_input_grad.then(|| Batch5D::from_raw(x.shape(), grad_in));
        Ok(ConvGrads { input, weights: grad_w, bias: grad_b })
    }
}
