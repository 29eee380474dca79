//! Inner loops of the 3x3x3 "same" convolution on a zero-padded layout.
//!
//! A channel of spatial dims `(nx, ny, nz)` is stored padded to
//! `(nx+2, ny+2, nz+2)` followed by [`LANES`] zeros of slack. In that layout
//! every kernel tap is a constant linear offset, so one output channel is a
//! sum of 27·C shifted copies of the input rows. Outputs are computed over the
//! contiguous range spanning the interior; positions in that range that fall
//! on the padding ring are garbage and are dropped by the caller.
//!
//! The portable kernels accumulate every output element in a fixed order, so
//! their SSE/AVX2 builds agree bit for bit. The AVX-512 kernels use fused
//! multiply-adds and agree with them only to rounding; any one machine always
//! takes the same path, which keeps runs reproducible.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicBool, Ordering};

use crate::volume::Dims;

pub(crate) const LANES: usize = 32;
const OUT_BLOCK: usize = 4;

static PORTABLE_ONLY: AtomicBool = AtomicBool::new(false);

/// Restricts the convolution kernels to the portable (non-FMA) accumulation
/// order, whose results are identical on every machine. Process-wide.
pub fn set_portable_kernels(on: bool) {
    PORTABLE_ONLY.store(on, Ordering::Relaxed);
}

pub fn portable_kernels() -> bool {
    PORTABLE_ONLY.load(Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PaddedGeometry {
    pub dims: Dims,
    /// Distance between channels in the buffer.
    pub stride: usize,
    /// First interior position.
    pub start: usize,
    /// Length of the range covering every interior position.
    pub len: usize,
    pub offsets: [isize; 27],
}

impl PaddedGeometry {
    pub fn new(dims: Dims) -> Self {
        let (py, pz) = (dims.ny + 2, dims.nz + 2);
        let padded = (dims.nx + 2) * py * pz;
        let pidx = |x: usize, y: usize, z: usize| (x * py + y) * pz + z;
        let start = pidx(1, 1, 1);
        let len = pidx(dims.nx, dims.ny, dims.nz) + 1 - start;
        let mut offsets = [0isize; 27];
        for kx in 0..3 {
            for ky in 0..3 {
                for kz in 0..3 {
                    let (dx, dy, dz) = (kx as isize - 1, ky as isize - 1, kz as isize - 1);
                    offsets[(kx * 3 + ky) * 3 + kz] = (dx * py as isize + dy) * pz as isize + dz;
                }
            }
        }
        Self { dims, stride: padded + LANES, start, len, offsets }
    }

    #[inline]
    pub fn interior(&self, x: usize, y: usize, z: usize) -> usize {
        ((x + 1) * (self.dims.ny + 2) + y + 1) * (self.dims.nz + 2) + z + 1
    }

    pub fn alloc(&self, channels: usize) -> Vec<f64> {
        vec![0.0; channels * self.stride]
    }

    /// Copies `channels` unpadded channel volumes into a padded buffer.
    pub fn pad_into(&self, src: &[f64], channels: usize, dst: &mut [f64]) {
        let d = self.dims;
        for c in 0..channels {
            let s = &src[c * d.len()..(c + 1) * d.len()];
            let o = &mut dst[c * self.stride..(c + 1) * self.stride];
            for x in 0..d.nx {
                for y in 0..d.ny {
                    let row = &s[(x * d.ny + y) * d.nz..][..d.nz];
                    let at = self.interior(x, y, 0);
                    o[at..at + d.nz].copy_from_slice(row);
                }
            }
        }
    }

    /// Reads the interior of a padded buffer back into unpadded channels,
    /// adding into `dst` when `accumulate` is set.
    pub fn unpad_into(&self, src: &[f64], channels: usize, dst: &mut [f64], accumulate: bool) {
        let d = self.dims;
        for c in 0..channels {
            let s = &src[c * self.stride..(c + 1) * self.stride];
            let o = &mut dst[c * d.len()..(c + 1) * d.len()];
            for x in 0..d.nx {
                for y in 0..d.ny {
                    let at = self.interior(x, y, 0);
                    let row = &mut o[(x * d.ny + y) * d.nz..][..d.nz];
                    if accumulate {
                        for (r, v) in row.iter_mut().zip(&s[at..at + d.nz]) {
                            *r += v;
                        }
                    } else {
                        row.copy_from_slice(&s[at..at + d.nz]);
                    }
                }
            }
        }
    }
}

/// `out[o] = bias[o] + Σ_c Σ_k w[o][c][k] · input[c][· + offset_k]` over the
/// interior range. `weights` is `(c_out, c_in, 27)`.
pub(crate) fn correlate(
    geo: &PaddedGeometry,
    input: &[f64],
    c_in: usize,
    weights: &[f64],
    bias: Option<&[f64]>,
    c_out: usize,
    out: &mut [f64],
) {
    #[cfg(all(any(feature = "std", test), target_arch = "x86_64"))]
    {
        if !portable_kernels() && std::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { x86::correlate(geo, input, c_in, weights, bias, c_out, out) };
        }
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { correlate_avx2(geo, input, c_in, weights, bias, c_out, out) };
        }
    }
    correlate_generic(geo, input, c_in, weights, bias, c_out, out)
}

#[cfg(all(any(feature = "std", test), target_arch = "x86_64"))]
#[target_feature(enable = "avx2")]
unsafe fn correlate_avx2(
    geo: &PaddedGeometry,
    input: &[f64],
    c_in: usize,
    weights: &[f64],
    bias: Option<&[f64]>,
    c_out: usize,
    out: &mut [f64],
) {
    correlate_generic(geo, input, c_in, weights, bias, c_out, out)
}

#[inline(always)]
fn correlate_generic(
    geo: &PaddedGeometry,
    input: &[f64],
    c_in: usize,
    weights: &[f64],
    bias: Option<&[f64]>,
    c_out: usize,
    out: &mut [f64],
) {
    let mut o0 = 0;
    while o0 + OUT_BLOCK <= c_out {
        correlate_block::<OUT_BLOCK>(geo, input, c_in, weights, bias, o0, out);
        o0 += OUT_BLOCK;
    }
    while o0 < c_out {
        correlate_block::<1>(geo, input, c_in, weights, bias, o0, out);
        o0 += 1;
    }
}

#[inline(always)]
fn correlate_block<const OB: usize>(
    geo: &PaddedGeometry,
    input: &[f64],
    c_in: usize,
    weights: &[f64],
    bias: Option<&[f64]>,
    o0: usize,
    out: &mut [f64],
) {
    let taps = c_in * 27;
    let w = &weights[o0 * taps..(o0 + OB) * taps];
    let mut ub = 0;
    while ub < geo.len {
        let n = LANES.min(geo.len - ub);
        let mut acc = [[0.0f64; LANES]; OB];
        if let Some(b) = bias {
            for (o, a) in acc.iter_mut().enumerate() {
                *a = [b[o0 + o]; LANES];
            }
        }
        for c in 0..c_in {
            let base = c * geo.stride + geo.start + ub;
            for k in 0..27 {
                let at = (base as isize + geo.offsets[k]) as usize;
                let src: &[f64; LANES] = input[at..at + LANES].try_into().unwrap();
                for (o, a) in acc.iter_mut().enumerate() {
                    let wv = w[o * taps + c * 27 + k];
                    for i in 0..LANES {
                        a[i] += wv * src[i];
                    }
                }
            }
        }
        for (o, a) in acc.iter().enumerate() {
            let at = (o0 + o) * geo.stride + geo.start + ub;
            out[at..at + n].copy_from_slice(&a[..n]);
        }
        ub += LANES;
    }
}

/// `grad_w[o][c][k] += Σ_u grad_out[o][u] · input[c][u + offset_k]`.
/// `grad_out` must be zero on the padding ring and in the slack.
pub(crate) fn weight_gradient(
    geo: &PaddedGeometry,
    input: &[f64],
    c_in: usize,
    grad_out: &[f64],
    c_out: usize,
    grad_w: &mut [f64],
) {
    #[cfg(all(any(feature = "std", test), target_arch = "x86_64"))]
    {
        if !portable_kernels() && std::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { x86::weight_gradient(geo, input, c_in, grad_out, c_out, grad_w) };
        }
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { weight_gradient_avx2(geo, input, c_in, grad_out, c_out, grad_w) };
        }
    }
    weight_gradient_generic(geo, input, c_in, grad_out, c_out, grad_w)
}

#[cfg(all(any(feature = "std", test), target_arch = "x86_64"))]
#[target_feature(enable = "avx2")]
unsafe fn weight_gradient_avx2(
    geo: &PaddedGeometry,
    input: &[f64],
    c_in: usize,
    grad_out: &[f64],
    c_out: usize,
    grad_w: &mut [f64],
) {
    weight_gradient_generic(geo, input, c_in, grad_out, c_out, grad_w)
}

#[inline(always)]
fn weight_gradient_generic(
    geo: &PaddedGeometry,
    input: &[f64],
    c_in: usize,
    grad_out: &[f64],
    c_out: usize,
    grad_w: &mut [f64],
) {
    let mut o0 = 0;
    while o0 + OUT_BLOCK <= c_out {
        weight_gradient_block::<OUT_BLOCK>(geo, input, c_in, grad_out, o0, grad_w);
        o0 += OUT_BLOCK;
    }
    while o0 < c_out {
        weight_gradient_block::<1>(geo, input, c_in, grad_out, o0, grad_w);
        o0 += 1;
    }
}

#[inline(always)]
fn weight_gradient_block<const OB: usize>(
    geo: &PaddedGeometry,
    input: &[f64],
    c_in: usize,
    grad_out: &[f64],
    o0: usize,
    grad_w: &mut [f64],
) {
    let taps = c_in * 27;
    for c in 0..c_in {
        for k in 0..27 {
            let shift = geo.offsets[k];
            let mut acc = [[0.0f64; LANES]; OB];
            let mut ub = 0;
            while ub < geo.len {
                let at = (c * geo.stride + geo.start + ub) as isize + shift;
                let x: &[f64; LANES] = input[at as usize..at as usize + LANES].try_into().unwrap();
                for (o, a) in acc.iter_mut().enumerate() {
                    let g0 = (o0 + o) * geo.stride + geo.start + ub;
                    let g: &[f64; LANES] = grad_out[g0..g0 + LANES].try_into().unwrap();
                    for i in 0..LANES {
                        a[i] += g[i] * x[i];
                    }
                }
                ub += LANES;
            }
            for (o, a) in acc.iter().enumerate() {
                // Fixed pairwise reduction order.
                let mut lanes = *a;
                let mut width = LANES;
                while width > 1 {
                    width /= 2;
                    for i in 0..width {
                        lanes[i] += lanes[i + width];
                    }
                }
                grad_w[(o0 + o) * taps + c * 27 + k] += lanes[0];
            }
        }
    }
}

/// Rearranges `(c_out, c_in, 27)` weights into the `(c_in, c_out, 27)`
/// flipped kernel that maps output gradients back to input gradients.
pub(crate) fn transpose_flip(weights: &[f64], c_out: usize, c_in: usize) -> Vec<f64> {
    let mut t = vec![0.0; weights.len()];
    for o in 0..c_out {
        for c in 0..c_in {
            for k in 0..27 {
                t[(c * c_out + o) * 27 + (26 - k)] = weights[(o * c_in + c) * 27 + k];
            }
        }
    }
    t
}

#[cfg(all(any(feature = "std", test), target_arch = "x86_64"))]
mod x86 {
    use core::arch::x86_64::*;

    use super::PaddedGeometry;

    /// Lanes per 512-bit register.
    const W: usize = 8;
    /// Weight-gradient accumulation is flushed to memory every CHUNK positions.
    const CHUNK: usize = 2048;

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn correlate(
        geo: &PaddedGeometry,
        input: &[f64],
        c_in: usize,
        weights: &[f64],
        bias: Option<&[f64]>,
        c_out: usize,
        out: &mut [f64],
    ) {
        assert!(input.len() >= c_in * geo.stride && out.len() >= c_out * geo.stride);
        assert!(weights.len() >= c_out * c_in * 27);
        let mut o0 = 0;
        while o0 + 8 <= c_out {
            correlate_block::<8, 3>(geo, input, c_in, weights, bias, o0, out);
            o0 += 8;
        }
        while o0 + 4 <= c_out {
            correlate_block::<4, 2>(geo, input, c_in, weights, bias, o0, out);
            o0 += 4;
        }
        while o0 < c_out {
            correlate_block::<1, 2>(geo, input, c_in, weights, bias, o0, out);
            o0 += 1;
        }
    }

    /// `OB` output channels x `V` registers of positions held in registers.
    #[inline]
    #[target_feature(enable = "avx512f")]
    unsafe fn correlate_block<const OB: usize, const V: usize>(
        geo: &PaddedGeometry,
        input: &[f64],
        c_in: usize,
        weights: &[f64],
        bias: Option<&[f64]>,
        o0: usize,
        out: &mut [f64],
    ) {
        let taps = c_in * 27;
        let w = weights.as_ptr().add(o0 * taps);
        let src = input.as_ptr();
        let dst = out.as_mut_ptr();
        let mut ub = 0;
        while ub < geo.len {
            let mut acc = [[_mm512_setzero_pd(); V]; OB];
            if let Some(b) = bias {
                for o in 0..OB {
                    acc[o] = [_mm512_set1_pd(b[o0 + o]); V];
                }
            }
            for c in 0..c_in {
                let base = src.add(c * geo.stride + geo.start + ub);
                let wc = w.add(c * 27);
                for k in 0..27 {
                    let p = base.offset(geo.offsets[k]);
                    let mut x = [_mm512_setzero_pd(); V];
                    for (v, xv) in x.iter_mut().enumerate() {
                        *xv = _mm512_loadu_pd(p.add(v * W));
                    }
                    for o in 0..OB {
                        let wv = _mm512_set1_pd(*wc.add(o * taps + k));
                        for v in 0..V {
                            acc[o][v] = _mm512_fmadd_pd(wv, x[v], acc[o][v]);
                        }
                    }
                }
            }
            // Full-width stores may spill into the padding ring or slack.
            for o in 0..OB {
                let p = dst.add((o0 + o) * geo.stride + geo.start + ub);
                for v in 0..V {
                    _mm512_storeu_pd(p.add(v * W), acc[o][v]);
                }
            }
            ub += V * W;
        }
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn weight_gradient(
        geo: &PaddedGeometry,
        input: &[f64],
        c_in: usize,
        grad_out: &[f64],
        c_out: usize,
        grad_w: &mut [f64],
    ) {
        assert!(input.len() >= c_in * geo.stride && grad_out.len() >= c_out * geo.stride);
        assert!(grad_w.len() >= c_out * c_in * 27);
        let mut u0 = 0;
        while u0 < geo.len {
            let u1 = (u0 + CHUNK).min(geo.len);
            let mut o = 0;
            while o + 2 <= c_out {
                weight_gradient_block::<2>(geo, input, c_in, grad_out, o, u0, u1, grad_w);
                o += 2;
            }
            if o < c_out {
                weight_gradient_block::<1>(geo, input, c_in, grad_out, o, u0, u1, grad_w);
            }
            u0 = u1;
        }
    }

    /// `OB` output channels x one 9-tap kernel plane per pass.
    #[inline]
    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    unsafe fn weight_gradient_block<const OB: usize>(
        geo: &PaddedGeometry,
        input: &[f64],
        c_in: usize,
        grad_out: &[f64],
        o0: usize,
        u0: usize,
        u1: usize,
        grad_w: &mut [f64],
    ) {
        let taps = c_in * 27;
        let src = input.as_ptr();
        let g = grad_out.as_ptr();
        for c in 0..c_in {
            for plane in 0..3 {
                let mut acc = [[_mm512_setzero_pd(); 9]; OB];
                let mut u = u0;
                // Lanes past `len` read zero gradients.
                while u < u1 {
                    let mut gv = [_mm512_setzero_pd(); OB];
                    for (o, v) in gv.iter_mut().enumerate() {
                        *v = _mm512_loadu_pd(g.add((o0 + o) * geo.stride + geo.start + u));
                    }
                    let base = src.add(c * geo.stride + geo.start + u);
                    for t in 0..9 {
                        let x = _mm512_loadu_pd(base.offset(geo.offsets[plane * 9 + t]));
                        for o in 0..OB {
                            acc[o][t] = _mm512_fmadd_pd(gv[o], x, acc[o][t]);
                        }
                    }
                    u += W;
                }
                for o in 0..OB {
                    for t in 0..9 {
                        grad_w[(o0 + o) * taps + c * 27 + plane * 9 + t] += _mm512_reduce_add_pd(acc[o][t]);
                    }
                }
            }
        }
    }
}
