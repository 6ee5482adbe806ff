//! Raw loops behind the graph operations.
//!
//! Convolution goes through im2col and a small blocked GEMM so the hot path
//! is a contiguous multiply-accumulate the compiler can vectorize. Everything
//! here is single-threaded and runs in a fixed order, which keeps forward and
//! backward passes bit-reproducible.

use crate::tensor::Real;

/// `c[m x n] += a[m x k] * b[k x n]`, all row-major.
pub fn gemm_acc<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // Block over columns so one C row tile and the matching B row tiles stay
    // in cache while we sweep k.
    const JB: usize = 512;
    let mut j0 = 0;
    while j0 < n {
        let jw = JB.min(n - j0);
        for i in 0..m {
            let crow = &mut c[i * n + j0..i * n + j0 + jw];
            let arow = &a[i * k..(i + 1) * k];
            for (p, &apk) in arow.iter().enumerate() {
                let brow = &b[p * n + j0..p * n + j0 + jw];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += apk * bv;
                }
            }
        }
        j0 += jw;
    }
}

/// `dst[cols x rows] = src[rows x cols]^T`.
pub fn transpose<T: Real>(rows: usize, cols: usize, src: &[T], dst: &mut [T]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Geometry of one conv2d application.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one image `x[c_in x h x w]` into `cols[(c_in*k*k) x (out_h*out_w)]`.
/// Rows are ordered `(c, ky, kx)` to match the flat weight layout. Padding
/// reads as zero.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    debug_assert_eq!(x.len(), g.c_in * g.h * g.w);
    debug_assert_eq!(cols.len(), g.patch_len() * g.out_len());
    let out_w = g.out_w;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * g.out_len();
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let dst = &mut cols[row + oy * out_w..row + (oy + 1) * out_w];
                    if iy < 0 || iy >= g.h as isize {
                        for v in dst.iter_mut() {
                            *v = T::ZERO;
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds column gradients back onto the image, accumulating into `dx`.
pub fn col2im_acc<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    debug_assert_eq!(dx.len(), g.c_in * g.h * g.w);
    debug_assert_eq!(cols.len(), g.patch_len() * g.out_len());
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * g.out_len();
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * g.out_w..row + (oy + 1) * g.out_w];
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
