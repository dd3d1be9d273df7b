use crate::scalar::Scalar;

/// Output extent of a pooling window sweep.
pub fn pooled_extent(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

fn window(o: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + k as isize).min(len as isize)) as usize;
    (lo, hi)
}

/// Average pooling over `planes` planes of `h × w`; the divisor counts
/// in-bounds cells only.
pub fn avg_pool_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Vec<T> {
    let (ho, wo) = (pooled_extent(h, k, stride, pad), pooled_extent(w, k, stride, pad));
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            let (y0, y1) = window(oy, h, k, stride, pad);
            for ox in 0..wo {
                let (x0, x1) = window(ox, w, k, stride, pad);
                let mut acc = T::zero();
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc += src[y * w + xx];
                    }
                }
                dst[oy * wo + ox] = acc / T::of(((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Scalar>(dout: &[T], dx: &mut [T], planes: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) {
    let (ho, wo) = (pooled_extent(h, k, stride, pad), pooled_extent(w, k, stride, pad));
    for p in 0..planes {
        let src = &dout[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            let (y0, y1) = window(oy, h, k, stride, pad);
            for ox in 0..wo {
                let (x0, x1) = window(ox, w, k, stride, pad);
                let g = src[oy * wo + ox] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for xx in x0..x1 {
                        dst[y * w + xx] += g;
                    }
                }
            }
        }
    }
}
