use crate::scalar::Scalar;

const MR: usize = 4;
const NR: usize = 8;
/// Columns of `b` packed at a time.
const NC: usize = 256;

/// `c[i,j] += Σ_p a(i,p) · b(p,j)`.
///
/// Column blocks of `b` are packed into contiguous 8-wide panels and `c` is
/// produced in 4×8 register tiles. Every entry sums its `k` products in
/// increasing `p` before being added to `c`, so the result does not depend
/// on the blocking.
#[inline(always)]
fn block_mul<T: Scalar>(m: usize, n: usize, k: usize, a: impl Fn(usize, usize) -> T, b: impl Fn(usize, usize) -> T, c: &mut [T]) {
    if m == 0 || n == 0 {
        return;
    }
    let mut panel = vec![T::zero(); k * NC];
    for j0 in (0..n).step_by(NC) {
        let width = NC.min(n - j0);
        let tiles = width.div_ceil(NR);
        for t in 0..tiles {
            let dst = &mut panel[t * k * NR..(t + 1) * k * NR];
            let cols = NR.min(width - t * NR);
            for l in 0..NR {
                let j = j0 + t * NR + l;
                if l < cols {
                    for p in 0..k {
                        dst[p * NR + l] = b(p, j);
                    }
                } else {
                    for p in 0..k {
                        dst[p * NR + l] = T::zero();
                    }
                }
            }
        }
        for i in (0..m).step_by(MR) {
            let rows = MR.min(m - i);
            let r = [i, i + 1.min(rows - 1), i + 2.min(rows - 1), i + 3.min(rows - 1)];
            for t in 0..tiles {
                let pk = &panel[t * k * NR..(t + 1) * k * NR];
                let acc = micro_kernel(k, pk, |p| [a(r[0], p), a(r[1], p), a(r[2], p), a(r[3], p)]);
                let j = j0 + t * NR;
                let cols = NR.min(n - j);
                for (rr, lane) in acc.iter().enumerate().take(rows) {
                    let dst = &mut c[(i + rr) * n + j..(i + rr) * n + j + cols];
                    for (d, &v) in dst.iter_mut().zip(lane) {
                        *d += v;
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn micro_kernel<T: Scalar>(k: usize, pk: &[T], a: impl Fn(usize) -> [T; MR]) -> [[T; NR]; MR] {
    let mut c0 = [T::zero(); NR];
    let mut c1 = [T::zero(); NR];
    let mut c2 = [T::zero(); NR];
    let mut c3 = [T::zero(); NR];
    for (p, bp) in pk.chunks_exact(NR).take(k).enumerate() {
        let bp: &[T; NR] = bp.try_into().expect("panel width");
        let [a0, a1, a2, a3] = a(p);
        for l in 0..NR {
            c0[l] += a0 * bp[l];
            c1[l] += a1 * bp[l];
            c2[l] += a2 * bp[l];
            c3[l] += a3 * bp[l];
        }
    }
    [c0, c1, c2, c3]
}

/// `c[m,n] += a[m,k] · b[k,n]`
pub fn gemm_nn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    block_mul(m, n, k, |i, p| a[i * k + p], |p, j| b[p * n + j], c);
}

/// `c[m,n] += a[m,k] · b[n,k]ᵀ`
pub fn gemm_nt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    block_mul(m, n, k, |i, p| a[i * k + p], |p, j| b[j * k + p], c);
}

/// `c[m,n] += a[k,m]ᵀ · b[k,n]`
pub fn gemm_tn<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    block_mul(m, n, k, |i, p| a[p * m + i], |p, j| b[p * n + j], c);
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent accumulators (vectorizes, fixed order).
#[inline]
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [T::zero(); 8];
    let chunks = x.len() / 8;
    for c in 0..chunks {
        let xs = &x[c * 8..c * 8 + 8];
        let ys = &y[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..x.len() {
        tail += x[i] * y[i];
    }
    let s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    s + tail
}

/// Sum with eight accumulators; same ordering contract as [`dot`].
#[inline]
pub fn sum<T: Scalar>(x: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = x.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += x[c * 8 + l];
        }
    }
    let mut tail = T::zero();
    for &v in &x[chunks * 8..] {
        tail += v;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, n: usize, k: usize, a: impl Fn(usize, usize) -> f64, b: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a(i, p) * b(p, j)).sum();
            }
        }
        c
    }

    #[test]
    fn all_layouts_agree_with_triple_loop() {
        let (m, n, k) = (5, 7, 11);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let want = naive(m, n, k, |i, p| a[i * k + p], |p, j| b[p * n + j]);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, n, k, &a, &b, &mut c);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let mut c = vec![0.0; m * n];
        gemm_nt(m, n, k, &a, &bt, &mut c);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let mut c = vec![0.0; m * n];
        gemm_tn(m, n, k, &at, &b, &mut c);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
