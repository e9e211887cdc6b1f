//! Raw per-image kernels used by the tape. Everything here works on flat
//! slices in CHW order and never allocates beyond the caller's buffers.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Some(Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// A 1×1 stride-1 unpadded conv reads its input directly as the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

pub fn im2col<S: Scalar>(x: &[S], g: &ConvGeom, cols: &mut [S]) {
    im2col_band(x, g, 0, g.ho, cols);
}

/// Output rows per band so a band's column matrix stays cache-sized.
pub fn band_rows(g: &ConvGeom) -> usize {
    const TARGET: usize = 1 << 16;
    (TARGET / (g.col_rows() * g.wo).max(1)).clamp(1, g.ho.max(1))
}

/// Columns for output rows `oy0..oy1` only; row stride `(oy1 - oy0) * wo`.
pub fn im2col_band<S: Scalar>(x: &[S], g: &ConvGeom, oy0: usize, oy1: usize, cols: &mut [S]) {
    let ncol = (oy1 - oy0) * g.wo;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let out = &mut cols[row * ncol..(row + 1) * ncol];
                let (lo, hi) = valid_range(g.wo, g.w, g.stride, g.pad, kx);
                for oy in oy0..oy1 {
                    let seg = &mut out[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    let Some(iy) = tap(oy, g.stride, g.pad, ky, g.h) else {
                        seg.fill(S::zero());
                        continue;
                    };
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    seg[..lo].fill(S::zero());
                    seg[hi..].fill(S::zero());
                    if lo < hi {
                        let first = lo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            seg[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (v, &s) in seg[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                                *v = s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cache-blocked transpose of a row-major `rows × cols` matrix into `dst`.
pub fn transpose<S: Scalar>(src: &[S], rows: usize, cols: usize, dst: &mut [S]) {
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Input row read by output row `o` at kernel offset `kk`, if inside the image.
#[inline]
fn tap(o: usize, stride: usize, pad: usize, kk: usize, size: usize) -> Option<usize> {
    (o * stride + kk).checked_sub(pad).filter(|&i| i < size)
}

/// Output columns `lo..hi` whose tap at kernel offset `kx` lands inside a
/// row of width `w`.
#[inline]
fn valid_range(wo: usize, w: usize, stride: usize, pad: usize, kx: usize) -> (usize, usize) {
    // ox * stride + kx >= pad  and  ox * stride + kx < w + pad
    let lo = pad.saturating_sub(kx).div_ceil(stride).min(wo);
    let hi = if w + pad > kx { (w + pad - kx).div_ceil(stride).min(wo) } else { 0 };
    (lo, hi.max(lo))
}

/// Scatter-add of a column matrix back into image layout (adjoint of `im2col`).
pub fn col2im<S: Scalar>(cols: &[S], g: &ConvGeom, dx: &mut [S]) {
    col2im_band(cols, g, 0, g.ho, dx);
}

/// Adjoint of [`im2col_band`].
pub fn col2im_band<S: Scalar>(cols: &[S], g: &ConvGeom, oy0: usize, oy1: usize, dx: &mut [S]) {
    let ncol = (oy1 - oy0) * g.wo;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * ncol..(row + 1) * ncol];
                let (lo, hi) = valid_range(g.wo, g.w, g.stride, g.pad, kx);
                if lo >= hi {
                    continue;
                }
                let first = lo * g.stride + kx - g.pad;
                for oy in oy0..oy1 {
                    let Some(iy) = tap(oy, g.stride, g.pad, ky, g.h) else { continue };
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let seg = &src[(oy - oy0) * g.wo + lo..(oy - oy0) * g.wo + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[first..first + seg.len()].iter_mut().zip(seg) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(g.stride).zip(seg) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Source indices and weight for one axis of bilinear resampling
/// (half-pixel centers, edge clamped).
#[derive(Clone, Copy, Debug)]
pub struct LerpTap<S> {
    pub lo: usize,
    pub hi: usize,
    pub frac: S,
}

pub fn bilinear_taps<S: Scalar>(src: usize, dst: usize) -> Vec<LerpTap<S>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            LerpTap {
                lo,
                hi,
                frac: S::lit(pos - lo as f64),
            }
        })
        .collect()
}

pub fn bilinear_forward<S: Scalar>(
    x: &[S],
    w: usize,
    ty: &[LerpTap<S>],
    tx: &[LerpTap<S>],
    out: &mut [S],
) {
    let wo = tx.len();
    for (oy, a) in ty.iter().enumerate() {
        let r0 = &x[a.lo * w..(a.lo + 1) * w];
        let r1 = &x[a.hi * w..(a.hi + 1) * w];
        for (ox, b) in tx.iter().enumerate() {
            let top = r0[b.lo] + (r0[b.hi] - r0[b.lo]) * b.frac;
            let bot = r1[b.lo] + (r1[b.hi] - r1[b.lo]) * b.frac;
            out[oy * wo + ox] = top + (bot - top) * a.frac;
        }
    }
}

pub fn bilinear_backward<S: Scalar>(
    dy: &[S],
    w: usize,
    ty: &[LerpTap<S>],
    tx: &[LerpTap<S>],
    dx: &mut [S],
) {
    let wo = tx.len();
    let one = S::one();
    for (oy, a) in ty.iter().enumerate() {
        for (ox, b) in tx.iter().enumerate() {
            let g = dy[oy * wo + ox];
            let gt = g * (one - a.frac);
            let gb = g * a.frac;
            dx[a.lo * w + b.lo] += gt * (one - b.frac);
            dx[a.lo * w + b.hi] += gt * b.frac;
            dx[a.hi * w + b.lo] += gb * (one - b.frac);
            dx[a.hi * w + b.hi] += gb * b.frac;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_of_stride_two_conv() {
        let g = ConvGeom::new(3, 64, 64, 3, 2, 1).unwrap();
        assert_eq!((g.ho, g.wo), (32, 32));
        assert!(ConvGeom::new(1, 2, 2, 5, 1, 0).is_none());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom::new(2, 5, 4, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64 * 0.7).sin()).collect();
        let c: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f64 * 1.3).cos())
            .collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn im2col_matches_direct_indexing() {
        for (h, w, k, stride, pad) in [(5, 4, 3, 1, 1), (6, 7, 3, 2, 1), (8, 8, 4, 2, 1), (5, 5, 3, 1, 0), (4, 6, 1, 1, 0), (7, 5, 3, 3, 2)] {
            let g = ConvGeom::new(2, h, w, k, stride, pad).unwrap();
            let x: Vec<f64> = (0..2 * h * w).map(|i| i as f64 + 1.0).collect();
            let mut cols = vec![f64::NAN; g.col_rows() * g.col_cols()];
            im2col(&x, &g, &mut cols);
            for ci in 0..2 {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        for oy in 0..g.ho {
                            for ox in 0..g.wo {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                let want = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    0.0
                                } else {
                                    x[ci * h * w + iy as usize * w + ix as usize]
                                };
                                assert_eq!(cols[row * g.col_cols() + oy * g.wo + ox], want, "{g:?}");
                            }
                        }
                    }
                }
            }
            // adjointness on the same geometry
            let c: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 1.3).cos()).collect();
            let mut back = vec![0.0; x.len()];
            col2im(&c, &g, &mut back);
            let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn transpose_small() {
        let mut t = vec![0.0; 6];
        transpose(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3, &mut t);
        assert_eq!(t, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn bilinear_upsample_of_constant_is_constant() {
        let ty = bilinear_taps::<f64>(4, 16);
        let tx = bilinear_taps::<f64>(4, 16);
        let x = vec![0.25; 16];
        let mut out = vec![0.0; 256];
        bilinear_forward(&x, 4, &ty, &tx, &mut out);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }
}
