//! HED-style multi-scale extractor producing K aligned side maps.

use edgesel_tensor::{Frame, Scalar, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Init};

/// K side maps `[N, 1, H, W]`, logistic-activated, with the downsampling
/// factor each one was computed at.
#[derive(Clone, Debug)]
pub struct FeatureStack<'t, T: Scalar> {
    pub sides: Vec<Var<'t, T>>,
    pub scales: Vec<usize>,
}

impl<'t, T: Scalar> FeatureStack<'t, T> {
    pub fn len(&self) -> usize {
        self.sides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sides.is_empty()
    }

    /// Sides concatenated on the channel axis, `[N, K, H, W]`.
    pub fn volume(&self) -> Result<Var<'t, T>> {
        Ok(Var::concat(&self.sides, 1)?)
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub stages: Vec<Stage>,
    pub sides: Vec<Conv2d>,
    /// 1×1 fusion over the side maps used by the baseline head.
    pub fuse: Conv2d,
    pub slope: f64,
    pub cubic_a: f64,
}

impl Backbone {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let mut stages = Vec::new();
        let mut sides = Vec::new();
        let mut c_in = 3;
        for (i, &c) in cfg.backbone_widths.iter().enumerate() {
            let name = format!("backbone.stage{}", i + 1);
            stages.push(Stage {
                conv1: Conv2d::new(init, &format!("{name}.conv1"), c_in, c, 3)?,
                bn1: BatchNorm2d::new(init, &format!("{name}.bn1"), c, cfg.bn_eps, cfg.bn_momentum)?,
                conv2: Conv2d::new(init, &format!("{name}.conv2"), c, c, 3)?,
                bn2: BatchNorm2d::new(init, &format!("{name}.bn2"), c, cfg.bn_eps, cfg.bn_momentum)?,
            });
            sides.push(Conv2d::new(init, &format!("backbone.side{}", i + 1), c, 1, 1)?);
            c_in = c;
        }
        let k = sides.len();
        let fuse = Conv2d::with_value(
            init,
            "backbone.fuse",
            edgesel_tensor::Tensor::full([1, k, 1, 1], 1.0 / k as f32),
            edgesel_tensor::Tensor::zeros([1]),
        )?;
        Ok(Backbone {
            stages,
            sides,
            fuse,
            slope: cfg.leaky_slope,
            cubic_a: cfg.cubic_a,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, image: &Var<'t, T>, train: bool) -> Result<FeatureStack<'t, T>> {
        let s = image.shape();
        let align = 1 << (self.stages.len() - 1);
        if s.len() != 4 || s[1] != 3 || s[2] % align != 0 || s[3] % align != 0 {
            return Err(Error::Contract(format!(
                "backbone expects [N,3,H,W] with H,W multiples of {align}, got {s:?}"
            )));
        }
        let slope = T::of(self.slope);
        let mut h = *image;
        let mut out = FeatureStack {
            sides: Vec::new(),
            scales: Vec::new(),
        };
        for (i, (stage, side)) in self.stages.iter().zip(&self.sides).enumerate() {
            if i > 0 {
                h = h.avg_pool(3, 2, 1)?;
            }
            h = stage.bn1.forward(f, &stage.conv1.forward(f, &h)?, train)?.leaky_relu(slope)?;
            h = stage.bn2.forward(f, &stage.conv2.forward(f, &h)?, train)?.leaky_relu(slope)?;
            let mut logit = side.forward(f, &h)?;
            for _ in 0..i {
                logit = logit.upsample_bicubic_x2(self.cubic_a)?;
            }
            out.sides.push(logit.sigmoid()?);
            out.scales.push(1 << i);
        }
        Ok(out)
    }

    /// Baseline prediction `σ(Σ wₖ·sideₖ + b)`, `[N, 1, H, W]`.
    pub fn default_head<'t, T: Scalar>(&self, f: &Frame<'t, T>, stack: &FeatureStack<'t, T>) -> Result<Var<'t, T>> {
        if stack.len() != self.fuse.c_in {
            return Err(Error::Contract(format!("head expects {} sides, got {}", self.fuse.c_in, stack.len())));
        }
        Ok(self.fuse.forward(f, &stack.volume()?)?.sigmoid()?)
    }
}
