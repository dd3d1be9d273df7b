//! Multi-scale edge detection with a pixel-wise feature selector.
//!
//! A small HED-style backbone emits K side maps; a U-shaped selector with
//! attention at the two coarsest scales predicts per-pixel softmax weights
//! over them, and the prediction is their weighted average.

pub mod backbone;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod gradcheck;
mod error;
pub mod loss;
mod mask;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod selector;
pub mod train;

pub use backbone::{Backbone, FeatureStack};
pub use checkpoint::Checkpoint;
pub use config::{EvalSplit, ModelConfig, RunConfig};
pub use error::{Error, Result};
pub use mask::{EdgeMap, Mask};
pub use selector::{select_fuse, EdgeModel, Mode, Outputs, TrainFlags};
