//! Separable ×2 cubic-convolution upsampling on a half-pixel grid with
//! reflect boundaries.

use crate::scalar::Scalar;

pub const DEFAULT_CUBIC_A: f64 = -0.75;

/// Cubic convolution kernel with free parameter `a`.
pub fn cubic_weight(t: f64, a: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Reflects an index into `[0, len)` without repeating the edge sample.
pub fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= len as isize { period - m } else { m }) as usize
}

/// Four `(source index, weight)` taps for each of the `2·len` outputs.
pub fn taps_x2<T: Scalar>(len: usize, a: f64) -> Vec<[(usize, T); 4]> {
    (0..2 * len)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut taps = [(0usize, T::zero()); 4];
            for (j, tap) in taps.iter_mut().enumerate() {
                let offset = j as isize - 1;
                let idx = reflect(base as isize + offset, len);
                *tap = (idx, T::of(cubic_weight(frac - offset as f64, a)));
            }
            taps
        })
        .collect()
}

/// `[planes, h, w] → [planes, 2h, 2w]`.
pub fn upsample_x2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, a: f64) -> Vec<T> {
    let tx = taps_x2::<T>(w, a);
    let ty = taps_x2::<T>(h, a);
    let (h2, w2) = (2 * h, 2 * w);
    let mut tmp = vec![T::zero(); planes * h * w2];
    for p in 0..planes {
        for y in 0..h {
            let src = &x[(p * h + y) * w..(p * h + y + 1) * w];
            let dst = &mut tmp[(p * h + y) * w2..(p * h + y + 1) * w2];
            for (o, taps) in tx.iter().enumerate() {
                dst[o] = taps.iter().fold(T::zero(), |acc, &(i, wt)| acc + wt * src[i]);
            }
        }
    }
    let mut out = vec![T::zero(); planes * h2 * w2];
    for p in 0..planes {
        for (oy, taps) in ty.iter().enumerate() {
            let dst = &mut out[(p * h2 + oy) * w2..(p * h2 + oy + 1) * w2];
            for &(iy, wt) in taps {
                let src = &tmp[(p * h + iy) * w2..(p * h + iy + 1) * w2];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
    }
    out
}

pub fn upsample_x2_backward<T: Scalar>(dout: &[T], dx: &mut [T], planes: usize, h: usize, w: usize, a: f64) {
    let tx = taps_x2::<T>(w, a);
    let ty = taps_x2::<T>(h, a);
    let (h2, w2) = (2 * h, 2 * w);
    let mut dtmp = vec![T::zero(); planes * h * w2];
    for p in 0..planes {
        for (oy, taps) in ty.iter().enumerate() {
            let src = &dout[(p * h2 + oy) * w2..(p * h2 + oy + 1) * w2];
            for &(iy, wt) in taps {
                let dst = &mut dtmp[(p * h + iy) * w2..(p * h + iy + 1) * w2];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
    }
    for p in 0..planes {
        for y in 0..h {
            let src = &dtmp[(p * h + y) * w2..(p * h + y + 1) * w2];
            let dst = &mut dx[(p * h + y) * w..(p * h + y + 1) * w];
            for (o, taps) in tx.iter().enumerate() {
                for &(i, wt) in taps {
                    dst[i] += wt * src[o];
                }
            }
        }
    }
}
