//! The selector building blocks. All blocks take batched `[N, C, H, W]`
//! inputs; `train` selects batch or running statistics in every BN.

use edgesel_tensor::{multi_head_attention, AttentionParams, Frame, Scalar, Tensor, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Init, LayerNorm, Linear};

fn bn(init: &mut Init, name: &str, c: usize, cfg: &ModelConfig) -> Result<BatchNorm2d> {
    BatchNorm2d::new(init, name, c, cfg.bn_eps, cfg.bn_momentum)
}

/// conv3×3 → BN → conv3×3 → BN → LeakyReLU.
#[derive(Clone, Debug)]
pub struct FeatureExtract {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub slope: f64,
}

impl FeatureExtract {
    pub fn new(init: &mut Init, name: &str, c_in: usize, c_out: usize, cfg: &ModelConfig) -> Result<Self> {
        Ok(FeatureExtract {
            conv1: Conv2d::new(init, &format!("{name}.conv1"), c_in, c_out, 3)?,
            bn1: bn(init, &format!("{name}.bn1"), c_out, cfg)?,
            conv2: Conv2d::new(init, &format!("{name}.conv2"), c_out, c_out, 3)?,
            bn2: bn(init, &format!("{name}.bn2"), c_out, cfg)?,
            slope: cfg.leaky_slope,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let h = self.bn1.forward(f, &self.conv1.forward(f, x)?, train)?;
        let h = self.bn2.forward(f, &self.conv2.forward(f, &h)?, train)?;
        Ok(h.leaky_relu(T::of(self.slope))?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    /// 3×3 average pool, stride 2, padding 1.
    Down,
    /// Bicubic ×2.
    Up,
}

/// conv3×3 → BN → LeakyReLU → resample → conv3×3. With `tail` set the final
/// conv is followed by BN and LeakyReLU as well.
#[derive(Clone, Debug)]
pub struct ResampleBlock {
    pub kind: Resample,
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub tail: Option<BatchNorm2d>,
    pub slope: f64,
    pub cubic_a: f64,
}

impl ResampleBlock {
    pub fn new(init: &mut Init, name: &str, kind: Resample, c_in: usize, c_out: usize, cfg: &ModelConfig) -> Result<Self> {
        let conv1 = Conv2d::new(init, &format!("{name}.conv1"), c_in, c_out, 3)?;
        let bn1 = bn(init, &format!("{name}.bn1"), c_out, cfg)?;
        let conv2 = Conv2d::new(init, &format!("{name}.conv2"), c_out, c_out, 3)?;
        let tail = match cfg.symmetric_resample {
            true => Some(bn(init, &format!("{name}.bn2"), c_out, cfg)?),
            false => None,
        };
        Ok(ResampleBlock {
            kind,
            conv1,
            bn1,
            conv2,
            tail,
            slope: cfg.leaky_slope,
            cubic_a: cfg.cubic_a,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let slope = T::of(self.slope);
        let h = self.bn1.forward(f, &self.conv1.forward(f, x)?, train)?.leaky_relu(slope)?;
        let h = match self.kind {
            Resample::Down => h.avg_pool(3, 2, 1)?,
            Resample::Up => h.upsample_bicubic_x2(self.cubic_a)?,
        };
        let h = self.conv2.forward(f, &h)?;
        match &self.tail {
            Some(norm) => Ok(norm.forward(f, &h, train)?.leaky_relu(slope)?),
            None => Ok(h),
        }
    }
}

/// `layer_norm(x + lin2(relu(lin1(x))))` over the trailing axis.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub lin1: Linear,
    pub lin2: Linear,
    pub norm: LayerNorm,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, dim: usize, cfg: &ModelConfig) -> Result<Self> {
        let hidden = dim * cfg.mlp_ratio;
        Ok(Mlp {
            lin1: Linear::new(init, &format!("{name}.lin1"), dim, hidden)?,
            lin2: Linear::new(init, &format!("{name}.lin2"), hidden, dim)?,
            norm: LayerNorm::new(init, &format!("{name}.norm"), dim, cfg.ln_eps)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.lin2.forward(f, &self.lin1.forward(f, x)?.relu()?)?;
        self.norm.forward(f, &x.add(&h)?)
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{name}: width {dim} is not divisible by {heads} heads")));
        }
        Ok(Attention {
            q: Linear::new(init, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(init, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(init, &format!("{name}.v"), dim, dim)?,
            out: Linear::new(init, &format!("{name}.out"), dim, dim)?,
            heads,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let p = AttentionParams {
            q_weight: f.var(self.q.weight),
            q_bias: f.var(self.q.bias),
            k_weight: f.var(self.k.weight),
            k_bias: f.var(self.k.bias),
            v_weight: f.var(self.v.weight),
            v_bias: f.var(self.v.bias),
            out_weight: f.var(self.out.weight),
            out_bias: f.var(self.out.bias),
        };
        Ok(multi_head_attention(x, &p, self.heads)?)
    }
}

/// Post-norm transformer layer on tokens `[N, T, D]`:
/// `a = LN(x + MHA(x))`, then the MLP.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attn: Attention,
    pub norm: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderBlock {
    pub fn new(init: &mut Init, name: &str, dim: usize, cfg: &ModelConfig) -> Result<Self> {
        Ok(EncoderBlock {
            attn: Attention::new(init, &format!("{name}.attn"), dim, cfg.heads)?,
            norm: LayerNorm::new(init, &format!("{name}.norm"), dim, cfg.ln_eps)?,
            mlp: Mlp::new(init, &format!("{name}.mlp"), dim, cfg)?,
        })
    }

    pub fn forward_tokens<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.norm.forward(f, &x.add(&self.attn.forward(f, x)?)?)?;
        self.mlp.forward(f, &a)
    }

    /// Flatten, attend, fold back.
    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        fold_tokens(&self.forward_tokens(f, &flatten_tokens(x)?)?, s[2], s[3])
    }
}

/// `[N, C, h, w]` to tokens `[N, h·w, C]` in row-major spatial order.
pub fn flatten_tokens<'t, T: Scalar>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Contract(format!("flatten_tokens expects [N,C,h,w], got {s:?}")));
    }
    Ok(x.reshape(vec![s[0], s[1], s[2] * s[3]])?.permute(&[0, 2, 1])?)
}

/// Inverse of [`flatten_tokens`].
pub fn fold_tokens<'t, T: Scalar>(x: &Var<'t, T>, h: usize, w: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 3 || s[1] != h * w {
        return Err(Error::Contract(format!("fold_tokens: {s:?} does not hold {h}x{w} tokens")));
    }
    Ok(x.permute(&[0, 2, 1])?.reshape(vec![s[0], s[2], h, w])?)
}

/// Fixed sinusoidal code for token positions, `[tokens, dim]`.
pub fn positional_code(tokens: usize, dim: usize) -> Tensor<f64> {
    Tensor::from_fn([tokens, dim], |i| {
        let (t, d) = ((i / dim) as f64, i % dim);
        let freq = 10000f64.powf(-((d / 2 * 2) as f64) / dim as f64);
        if d % 2 == 0 {
            (t * freq).sin()
        } else {
            (t * freq).cos()
        }
    })
}

/// Cascade of encoder blocks at one scale.
#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub blocks: Vec<EncoderBlock>,
    pub positional: bool,
}

impl EncoderStack {
    pub fn new(init: &mut Init, name: &str, dim: usize, depth: usize, cfg: &ModelConfig) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| EncoderBlock::new(init, &format!("{name}.block{}", i + 1), dim, cfg))
            .collect::<Result<_>>()?;
        Ok(EncoderStack {
            blocks,
            positional: cfg.positional_encoding,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        if self.blocks.is_empty() {
            return Ok(*x);
        }
        let s = x.shape();
        let mut tokens = flatten_tokens(x)?;
        if self.positional {
            let code = positional_code(s[2] * s[3], s[1]);
            let full = Tensor::from_fn([s[0], s[2] * s[3], s[1]], |i| T::of(code.data()[i % code.numel()]));
            tokens = tokens.add(&f.tape().constant(full))?;
        }
        for block in &self.blocks {
            tokens = block.forward_tokens(f, &tokens)?;
        }
        fold_tokens(&tokens, s[2], s[3])
    }
}

/// `up + σ(w)·skip` with a learnable scalar `w`.
#[derive(Clone, Debug)]
pub struct WeightedResidual {
    pub weight: edgesel_tensor::ParamId,
}

impl WeightedResidual {
    pub fn new(init: &mut Init, name: &str, value: f64) -> Result<Self> {
        Ok(WeightedResidual {
            weight: init.weight(&format!("{name}.weight"), Tensor::full([1], value as f32))?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, up: &Var<'t, T>, skip: &Var<'t, T>) -> Result<Var<'t, T>> {
        weighted_residual(up, skip, &f.var(self.weight))
    }
}

pub fn weighted_residual<'t, T: Scalar>(up: &Var<'t, T>, skip: &Var<'t, T>, w: &Var<'t, T>) -> Result<Var<'t, T>> {
    if up.shape() != skip.shape() {
        return Err(Error::Contract(format!("residual shapes differ: {:?} vs {:?}", up.shape(), skip.shape())));
    }
    Ok(up.add(&skip.mul_scalar_var(&w.sigmoid()?)?)?)
}

/// conv3×3 → BN → LeakyReLU → conv1×1 → BN → LeakyReLU → conv1×1 → softmax
/// over channels.
#[derive(Clone, Debug)]
pub struct WeightFuse {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub conv3: Conv2d,
    pub slope: f64,
}

impl WeightFuse {
    pub fn new(init: &mut Init, name: &str, c_in: usize, k: usize, cfg: &ModelConfig) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("{name}: need at least two sides, got {k}")));
        }
        Ok(WeightFuse {
            conv1: Conv2d::new(init, &format!("{name}.conv1"), c_in, c_in, 3)?,
            bn1: bn(init, &format!("{name}.bn1"), c_in, cfg)?,
            conv2: Conv2d::new(init, &format!("{name}.conv2"), c_in, c_in, 1)?,
            bn2: bn(init, &format!("{name}.bn2"), c_in, cfg)?,
            conv3: Conv2d::new(init, &format!("{name}.conv3"), c_in, k, 1)?,
            slope: cfg.leaky_slope,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let slope = T::of(self.slope);
        let h = self.bn1.forward(f, &self.conv1.forward(f, x)?, train)?.leaky_relu(slope)?;
        let h = self.bn2.forward(f, &self.conv2.forward(f, &h)?, train)?.leaky_relu(slope)?;
        Ok(self.conv3.forward(f, &h)?.softmax(1)?)
    }
}
