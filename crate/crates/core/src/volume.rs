//! 3D scalar fields and the preprocessing stage: trilinear sampling, affine
//! warping, resizing and nonzero-support intensity normalization.
//!
//! Axis convention: `x` is the sagittal index, `y` coronal, `z` axial. Voxel
//! `(x, y, z)` lives at linear offset `(x * ny + y) * nz + z` (x slowest,
//! z fastest). File formats in the `volcnn` crate use the same order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Voxel counts along x, y, z; serialized as `[nx, ny, nz]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl From<[usize; 3]> for Dims {
    fn from([nx, ny, nz]: [usize; 3]) -> Self {
        Self { nx, ny, nz }
    }
}

impl From<Dims> for [usize; 3] {
    fn from(d: Dims) -> Self {
        d.as_array()
    }
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.ny + y) * self.nz + z
    }

    /// Geometric center in voxel coordinates.
    pub fn center(&self) -> [f64; 3] {
        [
            (self.nx as f64 - 1.0) / 2.0,
            (self.ny as f64 - 1.0) / 2.0,
            (self.nz as f64 - 1.0) / 2.0,
        ]
    }
}

impl core::fmt::Display for Dims {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// A real-valued 3D scalar field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Volume3D {
    dims: Dims,
    data: Vec<f64>,
}

impl Volume3D {
    /// Checks dims, length and finiteness.
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidVolume(format!("non-positive dims {dims}")));
        }
        if data.len() != dims.len() {
            return Err(Error::InvalidVolume(format!(
                "{} values for dims {dims}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite value at offset {i}")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![0.0; dims.len()] }
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Self { dims, data: vec![value; dims.len()] }
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for x in 0..dims.nx {
            for y in 0..dims.ny {
                for z in 0..dims.nz {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        assert!(value.is_finite(), "non-finite voxel value");
        let i = self.dims.index(x, y, z);
        self.data[i] = value;
    }

    /// Voxel value, or 0 outside the grid.
    #[inline]
    fn get_or_zero(&self, x: isize, y: isize, z: isize) -> f64 {
        if x < 0 || y < 0 || z < 0 {
            return 0.0;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims.nx || y >= self.dims.ny || z >= self.dims.nz {
            return 0.0;
        }
        self.get(x, y, z)
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    // `a + t*(b-a)` rather than `(1-t)*a + t*b`: exact when t == 0 or a == b.
    a + t * (b - a)
}

/// Trilinear interpolation at a continuous coordinate. Neighbours outside the
/// grid read as 0.
pub fn trilinear_sample(vol: &Volume3D, p: [f64; 3]) -> f64 {
    if !(p[0].is_finite() && p[1].is_finite() && p[2].is_finite()) {
        return 0.0;
    }
    let d = vol.dims;
    // Anything at least one voxel outside the grid has no in-range neighbour.
    if p[0] <= -1.0
        || p[1] <= -1.0
        || p[2] <= -1.0
        || p[0] >= d.nx as f64
        || p[1] >= d.ny as f64
        || p[2] >= d.nz as f64
    {
        return 0.0;
    }
    let fx = math::floor(p[0]);
    let fy = math::floor(p[1]);
    let fz = math::floor(p[2]);
    let (tx, ty, tz) = (p[0] - fx, p[1] - fy, p[2] - fz);
    let (x0, y0, z0) = (fx as isize, fy as isize, fz as isize);

    let c = |dx: isize, dy: isize, dz: isize| vol.get_or_zero(x0 + dx, y0 + dy, z0 + dz);
    let c00 = lerp(c(0, 0, 0), c(0, 0, 1), tz);
    let c01 = lerp(c(0, 1, 0), c(0, 1, 1), tz);
    let c10 = lerp(c(1, 0, 0), c(1, 0, 1), tz);
    let c11 = lerp(c(1, 1, 0), c(1, 1, 1), tz);
    let c0 = lerp(c00, c01, ty);
    let c1 = lerp(c10, c11, ty);
    lerp(c0, c1, tx)
}

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn determinant(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Inverse via the adjugate; `None` for (numerically) singular matrices.
pub fn invert(a: &Mat3) -> Option<Mat3> {
    let det = determinant(a);
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(math::abs(*v)));
    if !det.is_finite() || scale == 0.0 || math::abs(det) <= 1e-12 * scale * scale * scale {
        return None;
    }
    let inv_det = 1.0 / det;
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    Some([
        [cof(1, 2, 1, 2) * inv_det, -cof(0, 2, 1, 2) * inv_det, cof(0, 1, 1, 2) * inv_det],
        [-cof(1, 2, 0, 2) * inv_det, cof(0, 2, 0, 2) * inv_det, -cof(0, 1, 0, 2) * inv_det],
        [cof(1, 2, 0, 1) * inv_det, -cof(0, 2, 0, 1) * inv_det, cof(0, 1, 0, 1) * inv_det],
    ])
}

/// `p ↦ linear · (p − center) + center + translation`, in voxel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub linear: Mat3,
    pub translation: [f64; 3],
    pub center: [f64; 3],
}

impl AffineTransform {
    pub fn identity(center: [f64; 3]) -> Self {
        Self { linear: IDENTITY3, translation: [0.0; 3], center }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self { linear: IDENTITY3, translation: t, center: [0.0; 3] }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = mat_vec(&self.linear, [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]]);
        [
            q[0] + self.center[0] + self.translation[0],
            q[1] + self.center[1] + self.translation[1],
            q[2] + self.center[2] + self.translation[2],
        ]
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let inv = invert(&self.linear).ok_or(Error::SingularTransform)?;
        let t = mat_vec(&inv, self.translation);
        Ok(AffineTransform { linear: inv, translation: [-t[0], -t[1], -t[2]], center: self.center })
    }

    /// The map in plain `A·p + b` form.
    fn matrix_form(&self) -> (Mat3, [f64; 3]) {
        let lc = mat_vec(&self.linear, self.center);
        let b = [
            self.center[0] - lc[0] + self.translation[0],
            self.center[1] - lc[1] + self.translation[1],
            self.center[2] - lc[2] + self.translation[2],
        ];
        (self.linear, b)
    }
}

/// Resamples `vol` onto an `out_dims` grid by inverse mapping: output voxel `q`
/// takes `trilinear_sample(vol, t⁻¹(q))`.
pub fn warp_affine(vol: &Volume3D, t: &AffineTransform, out_dims: Dims) -> Result<Volume3D> {
    if out_dims.is_empty() {
        return Err(Error::InvalidVolume(format!("non-positive output dims {out_dims}")));
    }
    let (a, b) = t.inverse()?.matrix_form();
    let mut data = Vec::with_capacity(out_dims.len());
    for x in 0..out_dims.nx {
        for y in 0..out_dims.ny {
            for z in 0..out_dims.nz {
                let q = [x as f64, y as f64, z as f64];
                let p = mat_vec(&a, q);
                data.push(trilinear_sample(vol, [p[0] + b[0], p[1] + b[1], p[2] + b[2]]));
            }
        }
    }
    Ok(Volume3D { dims: out_dims, data })
}

/// Per-axis scale taking input index range `[0, n_in-1]` onto `[0, n_out-1]`,
/// and the offset used when an axis collapses to a single voxel.
fn resize_axis(n_in: usize, n_out: usize) -> (f64, f64) {
    match (n_in, n_out) {
        (_, 1) => (1.0, -((n_in as f64 - 1.0) / 2.0)),
        (1, _) => (1.0, 0.0),
        _ => ((n_out as f64 - 1.0) / (n_in as f64 - 1.0), 0.0),
    }
}

/// Resizes to `target` with one scaling warp about the grid origin.
///
/// The scale along each axis is `(target-1)/(dims-1)`, so the first and last
/// voxel centres of input and output coincide and every output sample lies
/// inside the input support.
pub fn resize(vol: &Volume3D, target: Dims) -> Result<Volume3D> {
    if target.is_empty() {
        return Err(Error::InvalidVolume(format!("non-positive target dims {target}")));
    }
    if target == vol.dims {
        return Ok(vol.clone());
    }
    let d = vol.dims;
    let axes = [resize_axis(d.nx, target.nx), resize_axis(d.ny, target.ny), resize_axis(d.nz, target.nz)];
    let t = AffineTransform {
        linear: [[axes[0].0, 0.0, 0.0], [0.0, axes[1].0, 0.0], [0.0, 0.0, axes[2].0]],
        translation: [axes[0].1, axes[1].1, axes[2].1],
        center: [0.0; 3],
    };
    warp_affine(vol, &t, target)
}

/// How nonzero voxels are rescaled by [`normalize_intensity`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// Subtract the nonzero-support mean and divide by its standard deviation.
    #[default]
    Standardize,
    /// Subtract the nonzero-support mean only.
    CenterOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub volume: Volume3D,
    pub mean: f64,
    pub std: f64,
    /// Set when the nonzero support has zero spread (all nonzero voxels equal).
    pub degenerate: bool,
}

/// Normalizes over the strictly-nonzero voxels; zero background stays 0.
pub fn normalize_intensity(vol: &Volume3D, mode: NormalizeMode) -> Result<Normalized> {
    let (mut n, mut sum) = (0usize, 0.0f64);
    for &v in vol.data.iter().filter(|v| **v != 0.0) {
        n += 1;
        sum += v;
    }
    if n == 0 {
        return Err(Error::AllZeroVolume);
    }
    let mean = sum / n as f64;
    let var = vol.data.iter().filter(|v| **v != 0.0).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = math::sqrt(var);
    let degenerate = std == 0.0;
    let scale = match mode {
        _ if degenerate => 0.0,
        NormalizeMode::Standardize => 1.0 / std,
        NormalizeMode::CenterOnly => 1.0,
    };
    let data = vol
        .data
        .iter()
        .map(|&v| if v == 0.0 { 0.0 } else if degenerate { 0.0 } else { (v - mean) * scale })
        .collect();
    Ok(Normalized { volume: Volume3D { dims: vol.dims, data }, mean, std, degenerate })
}
