//! Selector network, the selection mechanism, and the assembled model.

use edgesel_tensor::{Frame, ParamStore, Scalar, Var};

use crate::backbone::{Backbone, FeatureStack};
use crate::blocks::{EncoderStack, FeatureExtract, Resample, ResampleBlock, WeightFuse, WeightedResidual};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::Init;

/// U-shaped network emitting per-pixel softmax weights over the K sides.
#[derive(Clone, Debug)]
pub struct Selector {
    pub extract: FeatureExtract,
    pub downs: Vec<ResampleBlock>,
    pub encoder8: EncoderStack,
    pub encoder16: EncoderStack,
    pub ups: Vec<ResampleBlock>,
    pub residuals: Vec<WeightedResidual>,
    pub fuse: WeightFuse,
}

impl Selector {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let w = &cfg.selector_widths;
        let extract = FeatureExtract::new(init, "selector.extract", 3, w[0], cfg)?;
        let mut downs = Vec::new();
        for i in 0..4 {
            downs.push(ResampleBlock::new(init, &format!("selector.down{}", i + 1), Resample::Down, w[i], w[i + 1], cfg)?);
        }
        let encoder8 = EncoderStack::new(init, "selector.encoder8", w[3], cfg.encoder_depth_eighth, cfg)?;
        let encoder16 = EncoderStack::new(init, "selector.encoder16", w[4], cfg.encoder_depth_sixteenth, cfg)?;
        let mut ups = Vec::new();
        let mut residuals = Vec::new();
        for i in 0..4 {
            ups.push(ResampleBlock::new(init, &format!("selector.up{}", i + 1), Resample::Up, w[4 - i], w[3 - i], cfg)?);
            residuals.push(WeightedResidual::new(init, &format!("selector.residual{}", i + 1), cfg.residual_init)?);
        }
        let fuse = WeightFuse::new(init, "selector.fuse", w[0], cfg.sides(), cfg)?;
        Ok(Selector {
            extract,
            downs,
            encoder8,
            encoder16,
            ups,
            residuals,
            fuse,
        })
    }

    /// Weight volume `[N, K, H, W]`; H and W must be multiples of 16.
    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, image: &Var<'t, T>, train: bool) -> Result<Var<'t, T>> {
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 || s[2] % 16 != 0 || s[3] % 16 != 0 {
            return Err(Error::Contract(format!("selector expects [N,3,H,W] with H,W multiples of 16, got {s:?}")));
        }
        let mut skips = vec![self.extract.forward(f, image, train)?];
        for (i, down) in self.downs.iter().enumerate() {
            let mut h = down.forward(f, skips.last().expect("non-empty"), train)?;
            if i == 2 {
                h = self.encoder8.forward(f, &h)?;
            }
            if i == 3 {
                h = self.encoder16.forward(f, &h)?;
            }
            skips.push(h);
        }
        let mut h = skips.pop().expect("five scales");
        for (up, res) in self.ups.iter().zip(&self.residuals) {
            let skip = skips.pop().expect("matching skip");
            h = res.forward(f, &up.forward(f, &h, train)?, &skip)?;
        }
        self.fuse.forward(f, &h, train)
    }
}

/// Per-pixel `Σₖ wₖ·sideₖ`, `[N, 1, H, W]`.
pub fn select_fuse<'t, T: Scalar>(stack: &FeatureStack<'t, T>, weights: &Var<'t, T>) -> Result<Var<'t, T>> {
    let volume = stack.volume()?;
    if volume.shape() != weights.shape() {
        return Err(Error::Contract(format!(
            "stack {:?} and weights {:?} disagree",
            volume.shape(),
            weights.shape()
        )));
    }
    Ok(volume.mul(weights)?.sum_axis(1)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    Selected,
    /// Both heads over one shared feature stack.
    Both,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "selected" => Ok(Mode::Selected),
            "both" => Ok(Mode::Both),
            _ => Err(Error::Config(format!("mode must be baseline, selected or both, got {s:?}"))),
        }
    }
}

/// Which sub-networks run BN in training mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainFlags {
    pub backbone: bool,
    pub selector: bool,
}

impl TrainFlags {
    pub const EVAL: TrainFlags = TrainFlags {
        backbone: false,
        selector: false,
    };
}

pub struct Outputs<'t, T: Scalar> {
    pub stack: FeatureStack<'t, T>,
    pub baseline: Option<Var<'t, T>>,
    pub weights: Option<Var<'t, T>>,
    pub selected: Option<Var<'t, T>>,
}

impl<'t, T: Scalar> Outputs<'t, T> {
    /// The prediction of the requested head.
    pub fn edge(&self, mode: Mode) -> Option<Var<'t, T>> {
        match mode {
            Mode::Baseline => self.baseline,
            Mode::Selected | Mode::Both => self.selected,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EdgeModel {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub selector: Selector,
}

impl EdgeModel {
    /// Builds the architecture and a freshly initialised parameter store.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, seed);
        let backbone = Backbone::new(&mut init, config)?;
        let selector = Selector::new(&mut init, config)?;
        Ok((
            EdgeModel {
                config: config.clone(),
                backbone,
                selector,
            },
            store,
        ))
    }

    pub fn forward<'t, T: Scalar>(&self, f: &Frame<'t, T>, image: &Var<'t, T>, mode: Mode, train: TrainFlags) -> Result<Outputs<'t, T>> {
        let stack = self.backbone.forward(f, image, train.backbone)?;
        let baseline = match mode {
            Mode::Baseline | Mode::Both => Some(self.backbone.default_head(f, &stack)?),
            Mode::Selected => None,
        };
        let (weights, selected) = match mode {
            Mode::Selected | Mode::Both => {
                let w = self.selector.forward(f, image, train.selector)?;
                let fused = select_fuse(&stack, &w)?;
                (Some(w), Some(fused))
            }
            Mode::Baseline => (None, None),
        };
        Ok(Outputs {
            stack,
            baseline,
            weights,
            selected,
        })
    }
}
