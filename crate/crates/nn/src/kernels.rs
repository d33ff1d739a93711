//! Per-image convolution kernels on `[c, h, w]` buffers.

use crate::scalar::gemm;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h + 2 * self.pad).saturating_sub(self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.pad).saturating_sub(self.kernel) / self.stride + 1;
        (ho, wo)
    }

    pub(crate) fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `ox` whose input column `ox*stride + k - pad` lies in `[0, w)`.
    #[inline]
    fn valid_range(&self, k: usize, w: usize, wo: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_excl = {
            let max_ix = w as isize - 1 - off;
            if max_ix < 0 {
                0
            } else {
                (max_ix / s + 1).min(wo as isize)
            }
        };
        let lo = lo.min(wo as isize) as usize;
        (lo, (hi_excl.max(lo as isize)) as usize)
    }
}

pub fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, g: ConvGeom, col: &mut [S]) {
    let (ho, wo) = g.out_size(h, w);
    let k = g.kernel;
    let plane = ho * wo;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_range(kx, w, wo);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(S::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                    drow[..lo].fill(S::zero());
                    drow[hi..].fill(S::zero());
                    let base = kx as isize - g.pad as isize;
                    if g.stride == 1 {
                        let start = (lo as isize + base) as usize;
                        drow[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate().take(hi).skip(lo) {
                            *d = src[(ox as isize * g.stride as isize + base) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds column gradients back into `gx`.
pub fn col2im<S: Scalar>(col: &[S], c: usize, h: usize, w: usize, g: ConvGeom, gx: &mut [S]) {
    let (ho, wo) = g.out_size(h, w);
    let k = g.kernel;
    let plane = ho * wo;
    for ci in 0..c {
        let gxc = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_range(kx, w, wo);
                let base = kx as isize - g.pad as isize;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut gxc[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    for ox in lo..hi {
                        drow[(ox as isize * g.stride as isize + base) as usize] += srow[ox];
                    }
                }
            }
        }
    }
}

/// Dense convolution. `weight` is `[cout, cin*k*k]`.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward<S: Scalar>(
    x: &[S],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[S],
    bias: &[S],
    cout: usize,
    g: ConvGeom,
) -> (Vec<S>, usize, usize) {
    let (ho, wo) = g.out_size(h, w);
    let plane = ho * wo;
    let mut y = vec![S::zero(); cout * plane];
    for (co, row) in y.chunks_mut(plane).enumerate() {
        row.fill(bias[co]);
    }
    let kk = cin * g.kernel * g.kernel;
    if g.is_pointwise() {
        gemm(false, false, cout, plane, kk, S::one(), weight, x, S::one(), &mut y);
    } else {
        let mut col = vec![S::zero(); kk * plane];
        im2col(x, cin, h, w, g, &mut col);
        gemm(false, false, cout, plane, kk, S::one(), weight, &col, S::one(), &mut y);
    }
    (y, ho, wo)
}

/// Gradients of a dense convolution. Accumulates into `gw`/`gb` when given and
/// returns the input gradient when `want_gx`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<S: Scalar>(
    x: &[S],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[S],
    cout: usize,
    g: ConvGeom,
    gy: &[S],
    param_grads: Option<(&mut [S], &mut [S])>,
    want_gx: bool,
) -> Option<Vec<S>> {
    let (ho, wo) = g.out_size(h, w);
    let plane = ho * wo;
    let kk = cin * g.kernel * g.kernel;
    let col_owned;
    let col: &[S] = if g.is_pointwise() {
        x
    } else {
        let mut c = vec![S::zero(); kk * plane];
        im2col(x, cin, h, w, g, &mut c);
        col_owned = c;
        &col_owned
    };
    if let Some((gw, gb)) = param_grads {
        gemm(false, true, cout, kk, plane, S::one(), gy, col, S::one(), gw);
        for (co, b) in gb.iter_mut().enumerate() {
            *b += gy[co * plane..(co + 1) * plane].iter().copied().sum::<S>();
        }
    }
    if !want_gx {
        return None;
    }
    if g.is_pointwise() {
        let mut gx = vec![S::zero(); cin * h * w];
        gemm(true, false, kk, plane, cout, S::one(), weight, gy, S::zero(), &mut gx);
        Some(gx)
    } else {
        let mut gcol = vec![S::zero(); kk * plane];
        gemm(true, false, kk, plane, cout, S::one(), weight, gy, S::zero(), &mut gcol);
        let mut gx = vec![S::zero(); cin * h * w];
        col2im(&gcol, cin, h, w, g, &mut gx);
        Some(gx)
    }
}

/// Depthwise convolution. `weight` is `[c, k*k]`.
pub fn depthwise_forward<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    weight: &[S],
    bias: &[S],
    g: ConvGeom,
) -> (Vec<S>, usize, usize) {
    let (ho, wo) = g.out_size(h, w);
    let k = g.kernel;
    let mut y = vec![S::zero(); c * ho * wo];
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        let yc = &mut y[ci * ho * wo..(ci + 1) * ho * wo];
        yc.fill(bias[ci]);
        for ky in 0..k {
            for kx in 0..k {
                let wv = weight[ci * k * k + ky * k + kx];
                let (lo, hi) = g.valid_range(kx, w, wo);
                let base = kx as isize - g.pad as isize;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut yc[oy * wo..(oy + 1) * wo];
                    if g.stride == 1 {
                        let start = (lo as isize + base) as usize;
                        for (d, &s) in dst[lo..hi].iter_mut().zip(&src[start..]) {
                            *d += wv * s;
                        }
                    } else {
                        for ox in lo..hi {
                            dst[ox] += wv * src[(ox as isize * g.stride as isize + base) as usize];
                        }
                    }
                }
            }
        }
    }
    (y, ho, wo)
}

#[allow(clippy::too_many_arguments)]
pub fn depthwise_backward<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    weight: &[S],
    g: ConvGeom,
    gy: &[S],
    mut param_grads: Option<(&mut [S], &mut [S])>,
    want_gx: bool,
) -> Option<Vec<S>> {
    let (ho, wo) = g.out_size(h, w);
    let k = g.kernel;
    let mut gx = if want_gx { vec![S::zero(); c * h * w] } else { Vec::new() };
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        let gyc = &gy[ci * ho * wo..(ci + 1) * ho * wo];
        if let Some((_, gb)) = param_grads.as_mut() {
            gb[ci] += gyc.iter().copied().sum::<S>();
        }
        for ky in 0..k {
            for kx in 0..k {
                let widx = ci * k * k + ky * k + kx;
                let wv = weight[widx];
                let (lo, hi) = g.valid_range(kx, w, wo);
                let base = kx as isize - g.pad as isize;
                let mut acc = S::zero();
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = iy as usize * w;
                    let grow = &gyc[oy * wo..(oy + 1) * wo];
                    for ox in lo..hi {
                        let ix = (ox as isize * g.stride as isize + base) as usize;
                        acc += xc[row + ix] * grow[ox];
                        if want_gx {
                            gx[ci * h * w + row + ix] += wv * grow[ox];
                        }
                    }
                }
                if let Some((gw, _)) = param_grads.as_mut() {
                    gw[widx] += acc;
                }
            }
        }
    }
    want_gx.then_some(gx)
}

pub fn upsample2_forward<S: Scalar>(x: &[S], c: usize, h: usize, w: usize) -> Vec<S> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut y = vec![S::zero(); c * h2 * w2];
    for ci in 0..c {
        for iy in 0..h {
            let src = &x[(ci * h + iy) * w..(ci * h + iy + 1) * w];
            for dy in 0..2 {
                let off = (ci * h2 + 2 * iy + dy) * w2;
                let dst = &mut y[off..off + w2];
                for (ix, &v) in src.iter().enumerate() {
                    dst[2 * ix] = v;
                    dst[2 * ix + 1] = v;
                }
            }
        }
    }
    y
}

pub fn upsample2_backward<S: Scalar>(gy: &[S], c: usize, h: usize, w: usize) -> Vec<S> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut gx = vec![S::zero(); c * h * w];
    for ci in 0..c {
        for iy in 0..h {
            let dst = &mut gx[(ci * h + iy) * w..(ci * h + iy + 1) * w];
            for dy in 0..2 {
                let off = (ci * h2 + 2 * iy + dy) * w2;
                let src = &gy[off..off + w2];
                for (ix, d) in dst.iter_mut().enumerate() {
                    *d += src[2 * ix] + src[2 * ix + 1];
                }
            }
        }
    }
    gx
}
