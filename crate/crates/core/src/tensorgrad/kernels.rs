//! Forward and backward kernels on plain tensors. The autodiff tape in
//! [`super::graph`] records which kernel produced a value and calls the
//! matching backward routine.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (batch, cin, h, w) = match input {
            &[b, c, h, w] => (b, c, h, w),
            _ => return Err(Error::dim(format!("conv2d input must be 4-D, got {input:?}"))),
        };
        let (cout, wcin, kh, kw) = match weight {
            &[o, i, kh, kw] => (o, i, kh, kw),
            _ => return Err(Error::dim(format!("conv2d weight must be 4-D, got {weight:?}"))),
        };
        if wcin != cin {
            return Err(Error::dim(format!(
                "conv2d weight expects {wcin} input channels, input has {cin}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::dim(format!(
                "conv2d kernel must be square with odd extent, got {kh}x{kw}"
            )));
        }
        if bias != [cout] {
            return Err(Error::dim(format!(
                "conv2d bias must have shape [{cout}], got {bias:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv2d stride must be positive"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::dim(format!(
                "conv2d kernel {kh} larger than padded input {h}x{w} (pad {pad})"
            )));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(Self {
            batch,
            cin,
            cout,
            kernel: kh,
            stride,
            pad,
            h,
            w,
            ho,
            wo,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `[lo, hi)` whose input column for kernel offset `kj`
    /// lies inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
        let hi = if self.w + p > kj {
            ((self.w + p - kj).div_ceil(s)).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let k = self.kernel;
        let n = self.out_plane();
        let (s, p) = (self.stride, self.pad);
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let (lo, hi) = self.valid_cols(kj);
                    let row = &mut cols[((ci * k + ki) * k + kj) * n..][..n];
                    for oy in 0..self.ho {
                        let iy = (oy * s + ki) as isize - p as isize;
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        if s == 1 {
                            let x0 = lo + kj - p;
                            dst[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate().take(hi).skip(lo) {
                                *d = src[ox * s + kj - p];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let k = self.kernel;
        let n = self.out_plane();
        let (s, p) = (self.stride, self.pad);
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let (lo, hi) = self.valid_cols(kj);
                    let row = &cols[((ci * k + ki) * k + kj) * n..][..n];
                    for oy in 0..self.ho {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let src = &row[oy * self.wo..(oy + 1) * self.wo];
                        if s == 1 {
                            let x0 = lo + kj - p;
                            for (d, &v) in dst[x0..x0 + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                *d += v;
                            }
                        } else {
                            for ox in lo..hi {
                                dst[ox * s + kj - p] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation (no kernel flip) with zero padding.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, ConvGeom)> {
    let g = ConvGeom::new(x.shape(), weight.shape(), bias.shape(), stride, pad)?;
    let kk = g.patch_len();
    let n = g.out_plane();
    let mut cols = vec![T::zero(); kk * n];
    let mut out = vec![T::zero(); g.batch * g.cout * n];
    let in_len = g.cin * g.h * g.w;
    for b in 0..g.batch {
        g.im2col(&x.data()[b * in_len..(b + 1) * in_len], &mut cols);
        let ob = &mut out[b * g.cout * n..(b + 1) * g.cout * n];
        for (co, row) in ob.chunks_exact_mut(n).enumerate() {
            row.fill(bias.data()[co]);
        }
        T::gemm(
            g.cout,
            kk,
            n,
            weight.data(),
            (kk as isize, 1),
            &cols,
            (n as isize, 1),
            T::one(),
            ob,
            (n as isize, 1),
        );
    }
    Ok((Tensor::new(vec![g.batch, g.cout, g.ho, g.wo], out)?, g))
}

/// Returns `(d_input, d_weight, d_bias)`; `d_input` is skipped when not needed.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    g: &ConvGeom,
    dy: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let kk = g.patch_len();
    let n = g.out_plane();
    let in_len = g.cin * g.h * g.w;
    let mut cols = vec![T::zero(); kk * n];
    let mut dcols = vec![T::zero(); kk * n];
    let mut dw = vec![T::zero(); g.cout * kk];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = need_dx.then(|| vec![T::zero(); g.batch * in_len]);
    for b in 0..g.batch {
        let dyb = &dy[b * g.cout * n..(b + 1) * g.cout * n];
        for (co, row) in dyb.chunks_exact(n).enumerate() {
            db[co] += row.iter().copied().sum::<T>();
        }
        g.im2col(&x.data()[b * in_len..(b + 1) * in_len], &mut cols);
        T::gemm(
            g.cout,
            n,
            kk,
            dyb,
            (n as isize, 1),
            &cols,
            (1, n as isize),
            T::one(),
            &mut dw,
            (kk as isize, 1),
        );
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                kk,
                g.cout,
                n,
                weight.data(),
                (1, kk as isize),
                dyb,
                (n as isize, 1),
                T::zero(),
                &mut dcols,
                (n as isize, 1),
            );
            g.col2im(&dcols, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    (dx, dw, db)
}

/// 2x2 non-overlapping max pooling. Returns the pooled tensor and, per output
/// element, the flat input index of the first maximal entry in row-major
/// window order.
pub fn maxpool2_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!(
            "maxpool2 needs even spatial extents, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut arg = Vec::with_capacity(b * c * ho * wo);
    let data = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..ho {
            let r0 = base + 2 * oy * w;
            let (top, bot) = (&data[r0..r0 + w], &data[r0 + w..r0 + 2 * w]);
            for ox in 0..wo {
                let j = 2 * ox;
                let (mut v, mut at) = (top[j], r0 + j);
                for (cand, idx) in [(top[j + 1], r0 + j + 1), (bot[j], r0 + w + j), (bot[j + 1], r0 + w + j + 1)] {
                    if cand > v {
                        v = cand;
                        at = idx;
                    }
                }
                out.push(v);
                arg.push(at);
            }
        }
    }
    Ok((Tensor::new(vec![b, c, ho, wo], out)?, arg))
}

/// `y = x · Wᵀ + b` for `x: [B, N]`, `W: [M, N]`, `b: [M]`.
pub fn linear_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (batch, n) = x.dims2()?;
    let (m, wn) = weight.dims2()?;
    if wn != n {
        return Err(Error::dim(format!(
            "linear weight expects {wn} inputs, got {n}"
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::dim(format!(
            "linear bias must have shape [{m}], got {:?}",
            bias.shape()
        )));
    }
    let mut out = Vec::with_capacity(batch * m);
    for _ in 0..batch {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        batch,
        n,
        m,
        x.data(),
        (n as isize, 1),
        weight.data(),
        (1, n as isize),
        T::one(),
        &mut out,
        (m as isize, 1),
    );
    Tensor::new(vec![batch, m], out)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (batch, n) = (x.shape()[0], x.shape()[1]);
    let m = weight.shape()[0];
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); batch * n];
        T::gemm(
            batch,
            m,
            n,
            dy,
            (m as isize, 1),
            weight.data(),
            (n as isize, 1),
            T::zero(),
            &mut dx,
            (n as isize, 1),
        );
        dx
    });
    let mut dw = vec![T::zero(); m * n];
    T::gemm(
        m,
        batch,
        n,
        dy,
        (1, m as isize),
        x.data(),
        (n as isize, 1),
        T::zero(),
        &mut dw,
        (n as isize, 1),
    );
    let mut db = vec![T::zero(); m];
    for row in dy.chunks_exact(m) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    (dx, dw, db)
}

/// Mean over the spatial axes: `[B, C, H, W] -> [B, C]`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if h * w == 0 {
        return Err(Error::dim("global average pool over an empty plane"));
    }
    let inv = T::one() / T::lit((h * w) as f64);
    let out = x
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(vec![b, c], out)
}

/// Softmax along the last axis with max subtraction.
pub fn softmax_lastaxis<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let last = *x.shape().last().unwrap_or(&1);
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(last.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
