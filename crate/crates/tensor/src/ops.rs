//! Differentiable forward ops on [`Var`].

use crate::error::{Result, TensorError};
use crate::kernels::{bicubic, conv, gemm, pool};
use crate::scalar::Scalar;
use crate::tape::{Op, Var};
use crate::tensor::{strides, Tensor};

fn same_shape<T: Scalar>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    a.same_tape(b)?;
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(TensorError::shape(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, T: Scalar> Var<'t, T> {
    fn any_grad(vars: &[&Var<'t, T>]) -> bool {
        vars.iter().any(|v| v.requires_grad())
    }

    fn unary(&self, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var<'t, T>> {
        self.check()?;
        let out = self.value().map(f);
        Ok(self.tape.push(out, op, self.requires_grad()))
    }

    fn zip(&self, other: &Var<'t, T>, name: &'static str, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var<'t, T>> {
        same_shape(name, self, other)?;
        let out = {
            let (a, b) = (self.value(), other.value());
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.tape.push(out, op, Self::any_grad(&[self, other])))
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.zip(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.zip(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.zip(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Result<Var<'t, T>> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(&self, c: T) -> Result<Var<'t, T>> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    /// Elementwise product with a constant (non-differentiable) tensor.
    pub fn mul_const(&self, c: &Tensor<T>) -> Result<Var<'t, T>> {
        self.check()?;
        let out = {
            let x = self.value();
            if x.shape() != c.shape() {
                return Err(TensorError::shape("mul_const", format!("{:?} vs {:?}", x.shape(), c.shape())));
            }
            let data = x.data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        let op = Op::MulConst(self.id, c.data().to_vec());
        Ok(self.tape.push(out, op, self.requires_grad()))
    }

    /// Multiplies every element by a single-element variable.
    pub fn mul_scalar_var(&self, s: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(s)?;
        if s.value().numel() != 1 {
            return Err(TensorError::shape("mul_scalar_var", format!("scale has shape {:?}", s.shape())));
        }
        let k = s.item();
        let out = self.value().map(|x| x * k);
        let op = Op::MulScalarVar { x: self.id, s: s.id };
        Ok(self.tape.push(out, op, Self::any_grad(&[self, s])))
    }

    pub fn leaky_relu(&self, slope: T) -> Result<Var<'t, T>> {
        self.unary(Op::LeakyRelu(self.id, slope), |x| if x >= T::zero() { x } else { slope * x })
    }

    pub fn relu(&self) -> Result<Var<'t, T>> {
        self.leaky_relu(T::zero())
    }

    pub fn sigmoid(&self) -> Result<Var<'t, T>> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn log(&self) -> Result<Var<'t, T>> {
        self.unary(Op::Log(self.id), |x| x.ln())
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&self, lo: T, hi: T) -> Result<Var<'t, T>> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn sum(&self) -> Result<Var<'t, T>> {
        self.check()?;
        let s = gemm::sum(self.value().data());
        Ok(self.tape.push(Tensor::scalar(s), Op::Sum(self.id), self.requires_grad()))
    }

    pub fn mean(&self) -> Result<Var<'t, T>> {
        self.check()?;
        let m = {
            let v = self.value();
            gemm::sum(v.data()) / T::of(v.numel() as f64)
        };
        Ok(self.tape.push(Tensor::scalar(m), Op::Mean(self.id), self.requires_grad()))
    }

    /// Sum over one axis, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        self.check()?;
        let (out, outer, len, inner) = {
            let v = self.value();
            if axis >= v.rank() {
                return Err(TensorError::shape("sum_axis", format!("axis {axis} for rank {}", v.rank())));
            }
            let (outer, len, inner) = split_axis(v.shape(), axis);
            let mut data = vec![T::zero(); outer * inner];
            for o in 0..outer {
                let dst = &mut data[o * inner..(o + 1) * inner];
                for l in 0..len {
                    let src = &v.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            let mut shape = v.shape().to_vec();
            shape[axis] = 1;
            (Tensor::new(shape, data)?, outer, len, inner)
        };
        let op = Op::SumAxis { x: self.id, outer, len, inner };
        Ok(self.tape.push(out, op, self.requires_grad()))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        self.check()?;
        let out = self.value().clone().reshape(shape)?;
        Ok(self.tape.push(out, Op::Reshape(self.id), self.requires_grad()))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.check()?;
        let out = {
            let v = self.value();
            let rank = v.rank();
            let mut seen = vec![false; rank];
            if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
                return Err(TensorError::shape("permute", format!("{axes:?} is not a permutation of rank {rank}")));
            }
            permute_data(&v, axes)
        };
        let op = Op::Permute { x: self.id, axes: axes.to_vec() };
        Ok(self.tape.push(out, op, self.requires_grad()))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(vars: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = vars.first().ok_or_else(|| TensorError::shape("concat", "no inputs"))?;
        for v in vars {
            first.same_tape(v)?;
        }
        let base = first.shape();
        if axis >= base.len() {
            return Err(TensorError::shape("concat", format!("axis {axis} for rank {}", base.len())));
        }
        let mut chunks = Vec::with_capacity(vars.len());
        for v in vars {
            let s = v.shape();
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            chunks.push(s[axis..].iter().product::<usize>());
        }
        let outer: usize = base[..axis].iter().product();
        let mut data = Vec::with_capacity(outer * chunks.iter().sum::<usize>());
        for o in 0..outer {
            for (v, &c) in vars.iter().zip(&chunks) {
                data.extend_from_slice(&v.value().data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = vars.iter().map(|v| v.shape()[axis]).sum();
        let out = Tensor::new(shape, data)?;
        let requires = vars.iter().any(|v| v.requires_grad());
        let op = Op::Concat { xs: vars.iter().map(|v| v.id).collect(), outer, chunks };
        Ok(first.tape.push(out, op, requires))
    }

    /// `[M,K]·[K,N]` or batched `[B,M,K]·[B,K,N]`.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let (sa, sb) = (self.shape(), other.shape());
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([b, m, k], [b2, k2, n]) if b == b2 && k == k2 => (*b, *m, *k, *n),
            _ => return Err(TensorError::shape("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let out = {
            let (a, b) = (self.value(), other.value());
            let mut c = vec![T::zero(); batch * m * n];
            for i in 0..batch {
                gemm::gemm_nn(m, n, k, &a.data()[i * m * k..], &b.data()[i * k * n..], &mut c[i * m * n..(i + 1) * m * n]);
            }
            let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
            Tensor::new(shape, c)?
        };
        let op = Op::MatMul { a: self.id, b: other.id, batch, m, k, n };
        Ok(self.tape.push(out, op, Self::any_grad(&[self, other])))
    }

    /// Cross-correlation of `[N,Cin,H,W]` with `[Cout,Cin,k,k]` plus bias.
    pub fn conv2d(&self, weight: &Var<'t, T>, bias: &Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        self.same_tape(weight)?;
        self.same_tape(bias)?;
        let (sx, sw, sb) = (self.shape(), weight.shape(), bias.shape());
        let geom = match (sx.as_slice(), sw.as_slice()) {
            ([n, ci, h, w], [co, ci2, k, k2]) if ci == ci2 && k == k2 && sb == [*co] => {
                conv::ConvGeom::new(*n, *ci, *h, *w, *co, *k, stride, pad)
            }
            _ => None,
        }
        .ok_or_else(|| TensorError::shape("conv2d", format!("input {sx:?}, weight {sw:?}, bias {sb:?}, stride {stride}, pad {pad}")))?;
        let out = {
            let data = conv::conv2d_forward(&geom, self.value().data(), weight.value().data(), bias.value().data());
            Tensor::new(vec![geom.n, geom.c_out, geom.h_out, geom.w_out], data)?
        };
        let op = Op::Conv2d { x: self.id, w: weight.id, b: bias.id, geom };
        Ok(self.tape.push(out, op, Self::any_grad(&[self, weight, bias])))
    }

    /// Batch normalization over axis 1 using the statistics of this batch.
    /// Returns the output with the per-channel mean and biased variance.
    pub fn batch_norm_train(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: T) -> Result<(Var<'t, T>, Vec<T>, Vec<T>)> {
        let (n, c, inner) = self.bn_geometry(gamma, beta)?;
        let m = n * inner;
        if m < 2 {
            return Err(TensorError::DegenerateStats { op: "batch_norm", count: m });
        }
        let x = self.value();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..n {
                s += gemm::sum(&x.data()[(b * c + ch) * inner..(b * c + ch + 1) * inner]);
            }
            let mu = s / T::of(m as f64);
            let mut sq = T::zero();
            for b in 0..n {
                for &v in &x.data()[(b * c + ch) * inner..(b * c + ch + 1) * inner] {
                    sq += (v - mu) * (v - mu);
                }
            }
            mean[ch] = mu;
            var[ch] = sq / T::of(m as f64);
        }
        drop(x);
        let out = self.bn_apply(gamma, beta, &mean, &var, eps, true)?;
        Ok((out, mean, var))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, mean: &[T], var: &[T], eps: T) -> Result<Var<'t, T>> {
        let (_, c, _) = self.bn_geometry(gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(TensorError::shape("batch_norm", format!("{c} channels, stats of length {}/{}", mean.len(), var.len())));
        }
        self.bn_apply(gamma, beta, mean, var, eps, false)
    }

    fn bn_geometry(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>) -> Result<(usize, usize, usize)> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let s = self.shape();
        if s.len() < 2 || gamma.shape() != [s[1]] || beta.shape() != [s[1]] {
            return Err(TensorError::shape("batch_norm", format!("input {s:?}, gamma {:?}, beta {:?}", gamma.shape(), beta.shape())));
        }
        Ok((s[0], s[1], s[2..].iter().product()))
    }

    fn bn_apply(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, mean: &[T], var: &[T], eps: T, batch_stats: bool) -> Result<Var<'t, T>> {
        let (n, c, inner) = self.bn_geometry(gamma, beta)?;
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (out, xhat) = {
            let (x, g, b) = (self.value(), gamma.value(), beta.value());
            let mut xhat = vec![T::zero(); x.numel()];
            let mut out = vec![T::zero(); x.numel()];
            for bi in 0..n {
                for ch in 0..c {
                    let range = (bi * c + ch) * inner..(bi * c + ch + 1) * inner;
                    let (mu, is, gm, bt) = (mean[ch], inv_std[ch], g.data()[ch], b.data()[ch]);
                    for i in range {
                        let h = (x.data()[i] - mu) * is;
                        xhat[i] = h;
                        out[i] = gm * h + bt;
                    }
                }
            }
            (Tensor::new(x.shape().to_vec(), out)?, xhat)
        };
        let op = Op::BatchNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std, batch_stats };
        Ok(self.tape.push(out, op, Self::any_grad(&[self, gamma, beta])))
    }

    /// Normalizes over the trailing axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let s = self.shape();
        let d = *s.last().ok_or_else(|| TensorError::shape("layer_norm", "rank-0 input"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::shape("layer_norm", format!("input {s:?}, gamma {:?}, beta {:?}", gamma.shape(), beta.shape())));
        }
        let (out, xhat, inv_std) = {
            let (x, g, b) = (self.value(), gamma.value(), beta.value());
            let rows = x.numel() / d;
            let mut out = vec![T::zero(); x.numel()];
            let mut xhat = vec![T::zero(); x.numel()];
            let mut inv_std = vec![T::zero(); rows];
            for r in 0..rows {
                let row = &x.data()[r * d..(r + 1) * d];
                let mu = gemm::sum(row) / T::of(d as f64);
                let var = row.iter().map(|&v| (v - mu) * (v - mu)).fold(T::zero(), |a, v| a + v) / T::of(d as f64);
                let is = T::one() / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let h = (row[j] - mu) * is;
                    xhat[r * d + j] = h;
                    out[r * d + j] = g.data()[j] * h + b.data()[j];
                }
            }
            (Tensor::new(s.clone(), out)?, xhat, inv_std)
        };
        let op = Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std };
        Ok(self.tape.push(out, op, Self::any_grad(&[self, gamma, beta])))
    }

    /// Affine map over the trailing axis: `x · weightᵀ + bias`.
    pub fn linear(&self, weight: &Var<'t, T>, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(weight)?;
        self.same_tape(bias)?;
        let (s, sw) = (self.shape(), weight.shape());
        let (d_out, d_in) = match sw.as_slice() {
            [o, i] if s.last() == Some(i) && bias.shape() == [*o] => (*o, *i),
            _ => return Err(TensorError::shape("linear", format!("input {s:?}, weight {sw:?}, bias {:?}", bias.shape()))),
        };
        let out = {
            let (x, w, b) = (self.value(), weight.value(), bias.value());
            let rows = x.numel() / d_in;
            let mut wt = vec![T::zero(); d_in * d_out];
            for o in 0..d_out {
                for i in 0..d_in {
                    wt[i * d_out + o] = w.data()[o * d_in + i];
                }
            }
            let mut out = Vec::with_capacity(rows * d_out);
            for _ in 0..rows {
                out.extend_from_slice(b.data());
            }
            gemm::gemm_nn(rows, d_out, d_in, x.data(), &wt, &mut out);
            let mut shape = s.clone();
            *shape.last_mut().expect("non-empty") = d_out;
            Tensor::new(shape, out)?
        };
        let rows = out.numel() / d_out;
        let op = Op::Linear { x: self.id, w: weight.id, b: bias.id, rows, d_in, d_out };
        Ok(self.tape.push(out, op, Self::any_grad(&[self, weight, bias])))
    }

    /// Average pooling on `[N,C,H,W]`; the divisor counts in-bounds cells only.
    pub fn avg_pool(&self, k: usize, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        self.check()?;
        let s = self.shape();
        let [n, c, h, w] = s[..] else {
            return Err(TensorError::shape("avg_pool", format!("expected [N,C,H,W], got {s:?}")));
        };
        if stride == 0 || pad >= k || h + 2 * pad < k || w + 2 * pad < k {
            return Err(TensorError::shape("avg_pool", format!("window {k}/{stride}/{pad} on {h}x{w}")));
        }
        let data = pool::avg_pool_forward(self.value().data(), n * c, h, w, k, stride, pad);
        let (ho, wo) = (pool::pooled_extent(h, k, stride, pad), pool::pooled_extent(w, k, stride, pad));
        let out = Tensor::new(vec![n, c, ho, wo], data)?;
        let op = Op::AvgPool { x: self.id, planes: n * c, h, w, k, stride, pad };
        Ok(self.tape.push(out, op, self.requires_grad()))
    }

    /// ×2 cubic-convolution upsampling of `[N,C,H,W]` with kernel parameter `a`.
    pub fn upsample_bicubic_x2(&self, a: f64) -> Result<Var<'t, T>> {
        self.check()?;
        let s = self.shape();
        let [n, c, h, w] = s[..] else {
            return Err(TensorError::shape("upsample_bicubic_x2", format!("expected [N,C,H,W], got {s:?}")));
        };
        if h < 2 || w < 2 {
            return Err(TensorError::shape("upsample_bicubic_x2", format!("needs H,W >= 2, got {h}x{w}")));
        }
        let data = bicubic::upsample_x2_forward(self.value().data(), n * c, h, w, a);
        let out = Tensor::new(vec![n, c, 2 * h, 2 * w], data)?;
        let op = Op::Upsample2x { x: self.id, planes: n * c, h, w, a };
        Ok(self.tape.push(out, op, self.requires_grad()))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        self.check()?;
        let (out, outer, len, inner) = {
            let x = self.value();
            if axis >= x.rank() {
                return Err(TensorError::shape("softmax", format!("axis {axis} for rank {}", x.rank())));
            }
            let (outer, len, inner) = split_axis(x.shape(), axis);
            let mut out = vec![T::zero(); x.numel()];
            let mut peak = vec![T::zero(); inner];
            let mut total = vec![T::zero(); inner];
            for o in 0..outer {
                let block = &x.data()[o * len * inner..(o + 1) * len * inner];
                let dst = &mut out[o * len * inner..(o + 1) * len * inner];
                peak.copy_from_slice(&block[..inner]);
                for l in 1..len {
                    for (p, &v) in peak.iter_mut().zip(&block[l * inner..(l + 1) * inner]) {
                        *p = p.max(v);
                    }
                }
                total.fill(T::zero());
                for l in 0..len {
                    for i in 0..inner {
                        let e = (block[l * inner + i] - peak[i]).exp();
                        dst[l * inner + i] = e;
                        total[i] += e;
                    }
                }
                for l in 0..len {
                    for i in 0..inner {
                        dst[l * inner + i] /= total[i];
                    }
                }
            }
            (Tensor::new(x.shape().to_vec(), out)?, outer, len, inner)
        };
        let op = Op::Softmax { x: self.id, outer, len, inner };
        Ok(self.tape.push(out, op, self.requires_grad()))
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn permute_data<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
    let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.numel());
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..x.numel() {
        let off: usize = idx.iter().zip(&gather).map(|(i, s)| i * s).sum();
        out.push(x.data()[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permutation preserves element count")
}
