//! Plain-slice kernels behind the differentiable ops.
//!
//! Every reduction runs in a fixed order, so results are bit-reproducible
//! for a given build.

pub mod bicubic;
pub mod conv;
pub mod gemm;
pub mod pool;
