use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Var;

/// Projection parameters of one multi-head self-attention layer; each
/// weight is `[D, D]`, each bias `[D]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams<'t, T: Scalar> {
    pub q_weight: Var<'t, T>,
    pub q_bias: Var<'t, T>,
    pub k_weight: Var<'t, T>,
    pub k_bias: Var<'t, T>,
    pub v_weight: Var<'t, T>,
    pub v_bias: Var<'t, T>,
    pub out_weight: Var<'t, T>,
    pub out_bias: Var<'t, T>,
}

/// Scaled dot-product self-attention over tokens `[T, D]` or `[B, T, D]`.
pub fn multi_head_attention<'t, T: Scalar>(x: &Var<'t, T>, params: &AttentionParams<'t, T>, heads: usize) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let (batch, tokens, dim) = match shape[..] {
        [t, d] => (1, t, d),
        [b, t, d] => (b, t, d),
        _ => return Err(TensorError::shape("multi_head_attention", format!("expected [T,D] or [B,T,D], got {shape:?}"))),
    };
    if heads == 0 || dim % heads != 0 {
        return Err(TensorError::Config(format!("embedding width {dim} is not divisible by {heads} heads")));
    }
    if tokens == 0 {
        return Err(TensorError::shape("multi_head_attention", "no tokens"));
    }
    let head_dim = dim / heads;
    let x = x.reshape(vec![batch, tokens, dim])?;

    let split = |v: Var<'t, T>, axes: &[usize], tail: [usize; 2]| -> Result<Var<'t, T>> {
        v.reshape(vec![batch, tokens, heads, head_dim])?
            .permute(axes)?
            .reshape(vec![batch * heads, tail[0], tail[1]])
    };
    let q = split(x.linear(&params.q_weight, &params.q_bias)?, &[0, 2, 1, 3], [tokens, head_dim])?;
    let k_t = split(x.linear(&params.k_weight, &params.k_bias)?, &[0, 2, 3, 1], [head_dim, tokens])?;
    let v = split(x.linear(&params.v_weight, &params.v_bias)?, &[0, 2, 1, 3], [tokens, head_dim])?;

    let scale = T::one() / T::of(head_dim as f64).sqrt();
    let weights = q.matmul(&k_t)?.scale(scale)?.softmax(2)?;
    let mixed = weights
        .matmul(&v)?
        .reshape(vec![batch, heads, tokens, head_dim])?
        .permute(&[0, 2, 1, 3])?
        .reshape(vec![batch, tokens, dim])?;
    mixed.linear(&params.out_weight, &params.out_bias)?.reshape(shape)
}
