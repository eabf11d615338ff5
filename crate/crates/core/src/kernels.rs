//! Raw numeric kernels over `[C, H, W]` buffers: patch unfolding for
//! convolutions, 2×2 max pooling and half-pixel bilinear resampling.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.height + 2 * self.pad - self.kernel) / self.stride + 1,
            (self.width + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Unfolds `input` into a `[C·k·k, Ho·Wo]` patch matrix.
pub(crate) fn im2col<T: Scalar>(input: &[T], g: ConvGeom) -> Vec<T> {
    let (oh, ow) = g.out_hw();
    let mut cols = vec![T::zero(); g.col_rows() * oh * ow];
    let (k, s, p) = (g.kernel, g.stride as isize, g.pad as isize);
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < g.width as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Folds a `[C·k·k, Ho·Wo]` patch matrix back, accumulating into `out`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: ConvGeom, out: &mut [T]) {
    let (oh, ow) = g.out_hw();
    let (k, s, p) = (g.kernel, g.stride as isize, g.pad as isize);
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 stride-2 max pooling; returns pooled values and the flat source index of each.
pub(crate) fn max_pool2<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    // strict comparison keeps the first maximum in scan order
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

/// One axis of a half-pixel bilinear resampling: for every output index the
/// lower source index, the upper source index and the weight of the upper one.
#[derive(Clone, Debug)]
pub(crate) struct AxisMap<T> {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<T>,
}

impl<T: Scalar> AxisMap<T> {
    pub fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for d in 0..dst {
            let pos = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let a = if i1 == i0 { 0.0 } else { pos - i0 as f64 };
            lo.push(i0);
            hi.push(i1);
            frac.push(T::cst(a));
        }
        Self { lo, hi, frac }
    }
}

/// Bilinear resize of a `[C, H, W]` buffer to `[C, oh, ow]`.
///
/// Interpolation is written as `v0 + a·(v1 − v0)` so that constant inputs and
/// same-size resizes are reproduced exactly.
pub(crate) fn resize_bilinear<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ym = AxisMap::<T>::new(h, oh);
    let xm = AxisMap::<T>::new(w, ow);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            let (r0, r1, ay) = (ym.lo[oy] * w, ym.hi[oy] * w, ym.frac[oy]);
            for ox in 0..ow {
                let (c0, c1, ax) = (xm.lo[ox], xm.hi[ox], xm.frac[ox]);
                let top = plane[r0 + c0] + ax * (plane[r0 + c1] - plane[r0 + c0]);
                let bot = plane[r1 + c0] + ax * (plane[r1 + c1] - plane[r1 + c0]);
                out.push(top + ay * (bot - top));
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: scatters output gradients back to the source grid.
pub(crate) fn resize_bilinear_backward<T: Scalar>(
    grad: &[T],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let ym = AxisMap::<T>::new(h, oh);
    let xm = AxisMap::<T>::new(w, ow);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        let g = &grad[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            let (r0, r1, ay) = (ym.lo[oy] * w, ym.hi[oy] * w, ym.frac[oy]);
            for ox in 0..ow {
                let (c0, c1, ax) = (xm.lo[ox], xm.hi[ox], xm.frac[ox]);
                let v = g[oy * ow + ox];
                let top = v * (T::one() - ay);
                let bot = v * ay;
                plane[r0 + c0] += top * (T::one() - ax);
                plane[r0 + c1] += top * ax;
                plane[r1 + c0] += bot * (T::one() - ax);
                plane[r1 + c1] += bot * ax;
            }
        }
    }
    out
}
