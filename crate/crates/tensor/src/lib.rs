//! Minimal dense-tensor engine with tape-based reverse-mode differentiation.
//!
//! Everything is generic over [`Scalar`] so that models train in `f32` and
//! the same code can be re-run in `f64` for finite-difference checks.

mod attention;
mod backward;
mod error;
pub mod gradcheck;
pub mod kernels;
pub mod suite;
mod ops;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use attention::{multi_head_attention, AttentionParams};
pub use error::{Result, TensorError};
pub use kernels::bicubic::DEFAULT_CUBIC_A;
pub use params::{Frame, ParamId, ParamStore, Parameter, Role};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Names of the differentiable primitives, used for coverage checks.
pub const PRIMITIVES: &[&str] = &[
    "conv2d",
    "batch_norm_train",
    "batch_norm_eval",
    "leaky_relu",
    "avg_pool",
    "bicubic_upsample_x2",
    "linear",
    "layer_norm",
    "multi_head_attention",
    "softmax_channels",
    "sigmoid",
    "log",
    "clamp",
    "matmul",
    "permute",
    "concat",
    "sum_axis",
    "mul",
    "mul_scalar_var",
];
