//! Parameterized layers. Each layer holds only `ParamId`s; values live in a
//! `ParamStore` and are bound per pass through a `Frame`.

use edgesel_tensor::{Frame, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Registers freshly initialised parameters into a store.
pub struct Init<'a> {
    store: &'a mut ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, seed: u64) -> Self {
        Init {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn weight(&mut self, name: &str, value: Tensor<f32>) -> Result<ParamId> {
        Ok(self.store.add_weight(name, value)?)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<f32>) -> Result<ParamId> {
        Ok(self.store.add_buffer(name, value)?)
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor<f32> {
        Tensor::randn(shape.to_vec(), std, &mut self.rng)
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<f32> {
        Tensor::uniform(shape.to_vec(), -bound, bound, &mut self.rng)
    }
}

/// Square convolution with "same" padding and stride 1.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn new(init: &mut Init, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let w = init.normal(&[c_out, c_in, k, k], std);
        Conv2d::with_value(init, name, w, Tensor::zeros([c_out]))
    }

    pub fn with_value(init: &mut Init, name: &str, weight: Tensor<f32>, bias: Tensor<f32>) -> Result<Self> {
        let s = weight.shape().to_vec();
        Ok(Conv2d {
            weight: init.weight(&format!("{name}.weight"), weight)?,
            bias: init.weight(&format!("{name}.bias"), bias)?,
            c_in: s[1],
            c_out: s[0],
            k: s[2],
        })
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.conv2d(&f.var(self.weight), &f.var(self.bias), 1, self.k / 2)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(init: &mut Init, name: &str, channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: init.weight(&format!("{name}.weight"), Tensor::full([channels], 1.0))?,
            beta: init.weight(&format!("{name}.bias"), Tensor::zeros([channels]))?,
            running_mean: init.buffer(&format!("{name}.running_mean"), Tensor::zeros([channels]))?,
            running_var: init.buffer(&format!("{name}.running_var"), Tensor::full([channels], 1.0))?,
            eps,
            momentum,
        })
    }

    /// Batch statistics in training mode, with the running averages queued
    /// on the frame; running statistics otherwise.
    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let (g, b) = (f.var(self.gamma), f.var(self.beta));
        let eps = T::of(self.eps);
        if !train {
            let mean = f.var(self.running_mean).tensor();
            let var = f.var(self.running_var).tensor();
            return Ok(x.batch_norm_eval(&g, &b, mean.data(), var.data(), eps)?);
        }
        let (y, mean, var) = x.batch_norm_train(&g, &b, eps)?;
        let s = x.shape();
        let m = (s[0] * s[2..].iter().product::<usize>()) as f64;
        let mom = T::of(self.momentum);
        let keep = T::one() - mom;
        let unbias = T::of(m / (m - 1.0));
        let old_mean = f.var(self.running_mean).tensor();
        let old_var = f.var(self.running_var).tensor();
        let new_mean: Vec<T> = old_mean.data().iter().zip(&mean).map(|(&o, &v)| keep * o + mom * v).collect();
        let new_var: Vec<T> = old_var
            .data()
            .iter()
            .zip(&var)
            .map(|(&o, &v)| keep * o + mom * v * unbias)
            .collect();
        f.record_update(self.running_mean, Tensor::new(old_mean.shape().to_vec(), new_mean)?);
        f.record_update(self.running_var, Tensor::new(old_var.shape().to_vec(), new_var)?);
        Ok(y)
    }
}

/// Affine map over the trailing axis, weight `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Uniform `±1/√in` weights, zero bias.
    pub fn new(init: &mut Init, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let w = init.uniform(&[d_out, d_in], 1.0 / (d_in as f64).sqrt());
        Ok(Linear {
            weight: init.weight(&format!("{name}.weight"), w)?,
            bias: init.weight(&format!("{name}.bias"), Tensor::zeros([d_out]))?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.linear(&f.var(self.weight), &f.var(self.bias))?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(LayerNorm {
            gamma: init.weight(&format!("{name}.weight"), Tensor::full([dim], 1.0))?,
            beta: init.weight(&format!("{name}.bias"), Tensor::zeros([dim]))?,
            eps,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.layer_norm(&f.var(self.gamma), &f.var(self.beta), T::of(self.eps))?)
    }
}
