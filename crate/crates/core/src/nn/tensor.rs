use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume3D};

/// A batch of multi-channel volumes, row-major `(batch, channels, nx, ny, nz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch5D {
    shape: [usize; 5],
    data: Vec<f64>,
}

impl Batch5D {
    pub fn new(shape: [usize; 5], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!("{} values for shape {shape:?}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("non-finite value in batch of shape {shape:?}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 5]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    /// Stacks single-channel volumes of equal dims.
    pub fn from_volumes<'a>(vols: impl IntoIterator<Item = &'a Volume3D>) -> Result<Self> {
        let mut data = Vec::new();
        let mut dims: Option<Dims> = None;
        let mut n = 0;
        for v in vols {
            match dims {
                None => dims = Some(v.dims()),
                Some(d) if d != v.dims() => {
                    return Err(Error::ShapeMismatch(format!("volume dims {} vs {}", v.dims(), d)));
                }
                _ => {}
            }
            data.extend_from_slice(v.data());
            n += 1;
        }
        let d = dims.ok_or(Error::EmptySplit("batch"))?;
        Ok(Self { shape: [n, 1, d.nx, d.ny, d.nz], data })
    }

    pub(crate) fn from_raw(shape: [usize; 5], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> Dims {
        Dims::new(self.shape[2], self.shape[3], self.shape[4])
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
