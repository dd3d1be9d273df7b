//! Vector-Jacobian products for every [`Op`].

use crate::kernels::{bicubic, conv, gemm, pool};
use crate::ops::permute_data;
use crate::scalar::Scalar;
use crate::tape::{Node, Op};
use crate::tensor::Tensor;

type Grads<T> = [Option<Vec<T>>];

/// Adds into the gradient buffer of `id` if that node requires gradients.
fn acc<T: Scalar>(nodes: &[Node<T>], grads: &mut Grads<T>, id: usize, f: impl FnOnce(&mut [T])) {
    if !nodes[id].requires_grad {
        return;
    }
    let buf = grads[id].get_or_insert_with(|| vec![T::zero(); nodes[id].value.numel()]);
    f(buf);
}

fn add_scaled<T: Scalar>(dst: &mut [T], src: &[T], k: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

pub(crate) fn apply<T: Scalar>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut Grads<T>) {
    let y = &nodes[id].value;
    let val = |i: usize| nodes[i].value.data();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc(nodes, grads, *a, |d| add_scaled(d, g, T::one()));
            acc(nodes, grads, *b, |d| add_scaled(d, g, T::one()));
        }
        Op::Sub(a, b) => {
            acc(nodes, grads, *a, |d| add_scaled(d, g, T::one()));
            acc(nodes, grads, *b, |d| add_scaled(d, g, -T::one()));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            acc(nodes, grads, *a, |d| {
                for ((d, &gi), &bi) in d.iter_mut().zip(g).zip(vb) {
                    *d += gi * bi;
                }
            });
            acc(nodes, grads, *b, |d| {
                for ((d, &gi), &ai) in d.iter_mut().zip(g).zip(va) {
                    *d += gi * ai;
                }
            });
        }
        Op::Scale(x, c) => acc(nodes, grads, *x, |d| add_scaled(d, g, *c)),
        Op::AddScalar(x) => acc(nodes, grads, *x, |d| add_scaled(d, g, T::one())),
        Op::MulConst(x, c) => acc(nodes, grads, *x, |d| {
            for ((d, &gi), &ci) in d.iter_mut().zip(g).zip(c) {
                *d += gi * ci;
            }
        }),
        Op::MulScalarVar { x, s } => {
            let k = val(*s)[0];
            acc(nodes, grads, *x, |d| add_scaled(d, g, k));
            let vx = val(*x);
            acc(nodes, grads, *s, |d| d[0] += gemm::dot(g, vx));
        }
        Op::LeakyRelu(x, slope) => {
            let vx = val(*x);
            acc(nodes, grads, *x, |d| {
                for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(vx) {
                    *d += if xi >= T::zero() { gi } else { *slope * gi };
                }
            });
        }
        Op::Sigmoid(x) => acc(nodes, grads, *x, |d| {
            for ((d, &gi), &yi) in d.iter_mut().zip(g).zip(y.data()) {
                *d += gi * yi * (T::one() - yi);
            }
        }),
        Op::Log(x) => {
            let vx = val(*x);
            acc(nodes, grads, *x, |d| {
                for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(vx) {
                    *d += gi / xi;
                }
            });
        }
        Op::Clamp(x, lo, hi) => {
            let vx = val(*x);
            acc(nodes, grads, *x, |d| {
                for ((d, &gi), &xi) in d.iter_mut().zip(g).zip(vx) {
                    if xi >= *lo && xi <= *hi {
                        *d += gi;
                    }
                }
            });
        }
        Op::Sum(x) => acc(nodes, grads, *x, |d| d.iter_mut().for_each(|v| *v += g[0])),
        Op::Mean(x) => {
            let k = g[0] / T::of(nodes[*x].value.numel() as f64);
            acc(nodes, grads, *x, |d| d.iter_mut().for_each(|v| *v += k));
        }
        Op::SumAxis { x, outer, len, inner } => acc(nodes, grads, *x, |d| {
            for o in 0..*outer {
                let src = &g[o * inner..(o + 1) * inner];
                for l in 0..*len {
                    add_scaled(&mut d[(o * len + l) * inner..(o * len + l + 1) * inner], src, T::one());
                }
            }
        }),
        Op::Reshape(x) => acc(nodes, grads, *x, |d| add_scaled(d, g, T::one())),
        Op::Permute { x, axes } => {
            let mut inverse = vec![0; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inverse[a] = i;
            }
            let gt = Tensor::new(y.shape().to_vec(), g.to_vec()).expect("grad matches output");
            let back = permute_data(&gt, &inverse);
            acc(nodes, grads, *x, |d| add_scaled(d, back.data(), T::one()));
        }
        Op::Concat { xs, outer, chunks } => {
            let total: usize = chunks.iter().sum();
            let mut offset = 0;
            for (&x, &c) in xs.iter().zip(chunks) {
                acc(nodes, grads, x, |d| {
                    for o in 0..*outer {
                        let src = &g[o * total + offset..o * total + offset + c];
                        add_scaled(&mut d[o * c..(o + 1) * c], src, T::one());
                    }
                });
                offset += c;
            }
        }
        Op::MatMul { a, b, batch, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let (va, vb) = (val(*a), val(*b));
            acc(nodes, grads, *a, |d| {
                for i in 0..*batch {
                    gemm::gemm_nt(m, k, n, &g[i * m * n..], &vb[i * k * n..], &mut d[i * m * k..(i + 1) * m * k]);
                }
            });
            acc(nodes, grads, *b, |d| {
                for i in 0..*batch {
                    gemm::gemm_tn(k, n, m, &va[i * m * k..], &g[i * m * n..], &mut d[i * k * n..(i + 1) * k * n]);
                }
            });
        }
        Op::Conv2d { x, w, b, geom } => {
            let mut dx = nodes[*x].requires_grad.then(|| vec![T::zero(); nodes[*x].value.numel()]);
            let mut dw = nodes[*w].requires_grad.then(|| vec![T::zero(); nodes[*w].value.numel()]);
            let mut db = nodes[*b].requires_grad.then(|| vec![T::zero(); nodes[*b].value.numel()]);
            if dx.is_some() || dw.is_some() || db.is_some() {
                conv::conv2d_backward(geom, val(*x), val(*w), g, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
            }
            for (id, part) in [(*x, dx), (*w, dw), (*b, db)] {
                if let Some(p) = part {
                    acc(nodes, grads, id, |d| add_scaled(d, &p, T::one()));
                }
            }
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
            let shape = nodes[*x].value.shape();
            let (n, c) = (shape[0], shape[1]);
            let inner: usize = shape[2..].iter().product();
            let m = T::of((n * inner) as f64);
            let gm = val(*gamma);
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
                    sum_g[ch] += gemm::sum(&g[r.clone()]);
                    sum_gx[ch] += gemm::dot(&g[r.clone()], &xhat[r]);
                }
            }
            acc(nodes, grads, *gamma, |d| add_scaled(d, &sum_gx, T::one()));
            acc(nodes, grads, *beta, |d| add_scaled(d, &sum_g, T::one()));
            acc(nodes, grads, *x, |d| {
                for b in 0..n {
                    for ch in 0..c {
                        let k = gm[ch] * inv_std[ch];
                        for i in (b * c + ch) * inner..(b * c + ch + 1) * inner {
                            d[i] += if *batch_stats {
                                k / m * (m * g[i] - sum_g[ch] - xhat[i] * sum_gx[ch])
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
            });
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let d_len = nodes[*gamma].value.numel();
            let rows = inv_std.len();
            let gm = val(*gamma);
            acc(nodes, grads, *gamma, |d| {
                for r in 0..rows {
                    for j in 0..d_len {
                        d[j] += g[r * d_len + j] * xhat[r * d_len + j];
                    }
                }
            });
            acc(nodes, grads, *beta, |d| {
                for r in 0..rows {
                    add_scaled(d, &g[r * d_len..(r + 1) * d_len], T::one());
                }
            });
            acc(nodes, grads, *x, |d| {
                let dn = T::of(d_len as f64);
                let mut dxhat = vec![T::zero(); d_len];
                for r in 0..rows {
                    let row = r * d_len..(r + 1) * d_len;
                    for j in 0..d_len {
                        dxhat[j] = g[r * d_len + j] * gm[j];
                    }
                    let mean_d = gemm::sum(&dxhat) / dn;
                    let mean_dx = gemm::dot(&dxhat, &xhat[row.clone()]) / dn;
                    for j in 0..d_len {
                        d[r * d_len + j] += inv_std[r] * (dxhat[j] - mean_d - xhat[r * d_len + j] * mean_dx);
                    }
                }
            });
        }
        Op::Linear { x, w, b, rows, d_in, d_out } => {
            let (rows, d_in, d_out) = (*rows, *d_in, *d_out);
            acc(nodes, grads, *x, |d| gemm::gemm_nn(rows, d_in, d_out, g, val(*w), d));
            acc(nodes, grads, *w, |d| gemm::gemm_tn(d_out, d_in, rows, g, val(*x), d));
            acc(nodes, grads, *b, |d| {
                for r in 0..rows {
                    add_scaled(d, &g[r * d_out..(r + 1) * d_out], T::one());
                }
            });
        }
        Op::AvgPool { x, planes, h, w, k, stride, pad } => acc(nodes, grads, *x, |d| {
            pool::avg_pool_backward(g, d, *planes, *h, *w, *k, *stride, *pad)
        }),
        Op::Upsample2x { x, planes, h, w, a } => acc(nodes, grads, *x, |d| {
            bicubic::upsample_x2_backward(g, d, *planes, *h, *w, *a)
        }),
        Op::Softmax { x, outer, len, inner } => acc(nodes, grads, *x, |d| {
            let (len, inner) = (*len, *inner);
            let yv = y.data();
            let mut dotv = vec![T::zero(); inner];
            for o in 0..*outer {
                let base = o * len * inner;
                dotv.fill(T::zero());
                for l in 0..len {
                    for i in 0..inner {
                        dotv[i] += g[base + l * inner + i] * yv[base + l * inner + i];
                    }
                }
                for l in 0..len {
                    for i in 0..inner {
                        let j = base + l * inner + i;
                        d[j] += yv[j] * (g[j] - dotv[i]);
                    }
                }
            }
        }),
    }
}
