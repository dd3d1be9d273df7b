use super::gemm::{gemm_nn, gemm_nt, gemm_tn, sum};
use crate::scalar::Scalar;

/// Geometry of a square-kernel 2-D cross-correlation over `[N, C, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(n: usize, c_in: usize, h: usize, w: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(ConvGeom {
            n,
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let (hw_out, k) = (g.col_cols(), g.k);
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // ix = ox + kx − pad; copy the in-bounds run, zero the rest.
                        let lo = g.pad.saturating_sub(kx).min(g.w_out);
                        let hi = (g.w + g.pad).saturating_sub(kx).min(g.w_out).max(lo);
                        line[..lo].fill(T::zero());
                        line[lo..hi].copy_from_slice(&src[lo + kx - g.pad..hi + kx - g.pad]);
                        line[hi..].fill(T::zero());
                        continue;
                    }
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let (hw_out, k) = (g.col_cols(), g.k);
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.w_out..(oy + 1) * g.w_out];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let lo = g.pad.saturating_sub(kx).min(g.w_out);
                        let hi = (g.w + g.pad).saturating_sub(kx).min(g.w_out).max(lo);
                        for (d, &v) in dst[lo + kx - g.pad..hi + kx - g.pad].iter_mut().zip(&line[lo..hi]) {
                            *d += v;
                        }
                        continue;
                    }
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * cols;
    let mut out = vec![T::zero(); g.n * out_len];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * cols] };
    for n in 0..g.n {
        let x_n = &x[n * in_len..(n + 1) * in_len];
        let o_n = &mut out[n * out_len..(n + 1) * out_len];
        for (co, plane) in o_n.chunks_mut(cols).enumerate() {
            plane.fill(bias[co]);
        }
        if g.is_pointwise() {
            gemm_nn(g.c_out, cols, rows, weight, x_n, o_n);
        } else {
            im2col(g, x_n, &mut col);
            gemm_nn(g.c_out, cols, rows, weight, &col, o_n);
        }
    }
    out
}

/// Accumulates gradients for whichever of input/weight/bias are requested.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * cols;
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * cols] };
    for n in 0..g.n {
        let x_n = &x[n * in_len..(n + 1) * in_len];
        let d_n = &dout[n * out_len..(n + 1) * out_len];
        if let Some(db) = db.as_deref_mut() {
            for (co, plane) in d_n.chunks(cols).enumerate() {
                db[co] += sum(plane);
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            if g.is_pointwise() {
                gemm_nt(g.c_out, rows, cols, d_n, x_n, dw);
            } else {
                im2col(g, x_n, &mut col);
                gemm_nt(g.c_out, rows, cols, d_n, &col, dw);
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dx_n = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                gemm_tn(rows, cols, g.c_out, weight, d_n, dx_n);
            } else {
                col.fill(T::zero());
                gemm_tn(rows, cols, g.c_out, weight, d_n, &mut col);
                col2im(g, &col, dx_n);
            }
        }
    }
}
