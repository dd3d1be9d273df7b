//! Finite-difference checks at block and whole-model scope, run in f64
//! against a cast of the f32 parameter store.

use edgesel_tensor::gradcheck::{GradCheck, GradCheckReport};
use edgesel_tensor::suite::{primitive_suite, SuiteEntry};
use edgesel_tensor::{Frame, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, FeatureStack};
use crate::blocks::{Attention, EncoderBlock, EncoderStack, FeatureExtract, Mlp, Resample, ResampleBlock, WeightFuse, WeightedResidual};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::loss::{wbce_loss, WbceParams};
use crate::mask::Mask;
use crate::nn::Init;
use crate::selector::{select_fuse, EdgeModel, Mode, TrainFlags};

pub const BLOCKS: &[&str] = &[
    "feature_extract",
    "resample_down",
    "resample_up",
    "mlp",
    "attention",
    "encoder_block",
    "encoder_stack",
    "weighted_residual",
    "weight_fuse",
    "select_fuse",
    "backbone",
    "wbce_loss",
];

/// Side length of the model-scope check image.
pub const MODEL_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Primitive,
    Block,
    Model,
}

impl std::str::FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primitive" => Ok(Scope::Primitive),
            "block" => Ok(Scope::Block),
            "model" => Ok(Scope::Model),
            other => Err(Error::Config(format!("unknown gradcheck scope `{other}` (primitive, block, model)"))),
        }
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

fn random_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Mask {
    let bits = (0..h * w).map(|_| rng.gen_bool(0.3)).collect();
    Mask::new(h, w, bits).expect("bit count matches extent")
}

/// Every store entry plus `extra` become checked inputs; `f` receives a
/// frame over the store leaves and the extra leaves.
fn run_with_store<F>(check: &GradCheck, store: &ParamStore<f32>, extra: Vec<(&str, Tensor<f64>)>, train: bool, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&Frame<'t, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let cast: ParamStore<f64> = store.cast();
    let n = cast.len();
    let mut inputs: Vec<(String, Tensor<f64>)> = cast.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
    inputs.extend(extra.into_iter().map(|(n, t)| (n.to_string(), t)));
    let report = check.run(&inputs, |vars| {
        let frame = Frame::from_vars(vars[0].tape(), vars[..n].to_vec(), train);
        f(&frame, &vars[n..]).map_err(|e| match e {
            Error::Tensor(t) => t,
            other => edgesel_tensor::TensorError::Config(other.to_string()),
        })
    })?;
    Ok(report)
}

fn project<'t>(out: Var<'t, f64>, rng: &mut ChaCha8Rng) -> Result<Var<'t, f64>> {
    let w = uniform(&out.shape(), -1.0, 1.0, rng);
    Ok(out.mul_const(&w)?.sum()?)
}

fn block_config() -> ModelConfig {
    ModelConfig {
        heads: 2,
        ..ModelConfig::default()
    }
}

/// One randomized check of `block`. Blocks with batch norm are checked in
/// training mode, where the batch statistics are part of the graph.
pub fn check_block(block: &str, trial: u64, check: &GradCheck) -> Result<GradCheckReport> {
    let seed = check.seed ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj_seed = seed.wrapping_add(1);
    let cfg = block_config();
    let mut store = ParamStore::new();
    let mut init = Init::new(&mut store, seed);
    macro_rules! projected {
        ($out:expr) => {{
            let mut prng = ChaCha8Rng::seed_from_u64(proj_seed);
            project($out, &mut prng)
        }};
    }
    match block {
        "feature_extract" => {
            let b = FeatureExtract::new(&mut init, "b", 3, 4, &cfg)?;
            let x = uniform(&[2, 3, 5, 6], -1.0, 1.0, &mut rng);
            run_with_store(check, &store, vec![("x", x)], true, |f, v| projected!(b.forward(f, &v[0], true)?))
        }
        "resample_down" | "resample_up" => {
            let kind = if block == "resample_down" { Resample::Down } else { Resample::Up };
            let sym = trial % 2 == 1;
            let cfg = ModelConfig { symmetric_resample: sym, ..cfg };
            let b = ResampleBlock::new(&mut init, "b", kind, 3, 4, &cfg)?;
            let x = uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
            run_with_store(check, &store, vec![("x", x)], true, |f, v| projected!(b.forward(f, &v[0], true)?))
        }
        "mlp" => {
            let b = Mlp::new(&mut init, "b", 6, &cfg)?;
            let x = uniform(&[2, 5, 6], -1.0, 1.0, &mut rng);
            run_with_store(check, &store, vec![("x", x)], true, |f, v| projected!(b.forward(f, &v[0])?))
        }
        "attention" => {
            let b = Attention::new(&mut init, "b", 6, 2)?;
            let x = uniform(&[2, 5, 6], -1.0, 1.0, &mut rng);
            run_with_store(check, &store, vec![("x", x)], true, |f, v| projected!(b.forward(f, &v[0])?))
        }
        "encoder_block" => {
            let b = EncoderBlock::new(&mut init, "b", 6, &cfg)?;
            let x = uniform(&[2, 6, 2, 3], -1.0, 1.0, &mut rng);
            run_with_store(check, &store, vec![("x", x)], true, |f, v| projected!(b.forward(f, &v[0])?))
        }
        "encoder_stack" => {
            let cfg = ModelConfig { positional_encoding: trial % 2 == 1, ..cfg };
            let b = EncoderStack::new(&mut init, "b", 6, 2, &cfg)?;
            let x = uniform(&[2, 6, 2, 2], -1.0, 1.0, &mut rng);
            run_with_store(check, &store, vec![("x", x)], true, |f, v| projected!(b.forward(f, &v[0])?))
        }
        "weighted_residual" => {
            let b = WeightedResidual::new(&mut init, "b", rng.gen_range(-1.0..1.0))?;
            let up = uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
            let skip = uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
            run_with_store(check, &store, vec![("up", up), ("skip", skip)], true, |f, v| projected!(b.forward(f, &v[0], &v[1])?))
        }
        "weight_fuse" => {
            let b = WeightFuse::new(&mut init, "b", 4, 3, &cfg)?;
            let x = uniform(&[2, 4, 4, 5], -1.0, 1.0, &mut rng);
            run_with_store(check, &store, vec![("x", x)], true, |f, v| projected!(b.forward(f, &v[0], true)?))
        }
        "select_fuse" => {
            let k = 2 + trial as usize % 4;
            let mut extra = Vec::new();
            let names = ["s0", "s1", "s2", "s3", "s4", "s5"];
            for name in names.iter().take(k) {
                extra.push((*name, uniform(&[2, 1, 4, 5], 0.0, 1.0, &mut rng)));
            }
            extra.push(("logits", uniform(&[2, k, 4, 5], -2.0, 2.0, &mut rng)));
            run_with_store(check, &store, extra, true, |_, v| {
                let stack = FeatureStack {
                    sides: v[..k].to_vec(),
                    scales: (0..k).map(|i| 1 << i).collect(),
                };
                let w = v[k].softmax(1)?;
                projected!(select_fuse(&stack, &w)?)
            })
        }
        "backbone" => {
            let cfg = ModelConfig {
                backbone_widths: vec![3, 4, 4],
                ..cfg
            };
            let b = Backbone::new(&mut init, &cfg)?;
            let x = uniform(&[2, 3, 16, 16], -1.0, 1.0, &mut rng);
            run_with_store(check, &store, vec![("image", x)], true, |f, v| {
                let stack = b.forward(f, &v[0], true)?;
                let head = b.default_head(f, &stack)?;
                let vol = stack.volume()?;
                let mut prng = ChaCha8Rng::seed_from_u64(proj_seed);
                Ok(project(head, &mut prng)?.add(&project(vol, &mut prng)?)?)
            })
        }
        "wbce_loss" => {
            let gts = [random_mask(4, 5, &mut rng), random_mask(4, 5, &mut rng)];
            let logits = uniform(&[2, 1, 4, 5], -3.0, 3.0, &mut rng);
            let lambda = rng.gen_range(0.5..2.0);
            run_with_store(check, &store, vec![("logits", logits)], true, |_, v| {
                let refs: Vec<&Mask> = gts.iter().collect();
                wbce_loss(&v[0].sigmoid()?, &refs, WbceParams { lambda, eps: 1e-6 })
            })
        }
        other => Err(Error::Config(format!("unknown block `{other}`"))),
    }
}

/// Gradient of the selected-mode loss with respect to every parameter of
/// a compact model on a `3×32×32` image, all BN layers in training mode.
pub fn check_model(trial: u64, check: &GradCheck) -> Result<GradCheckReport> {
    let seed = check.seed ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, store) = EdgeModel::new(&ModelConfig::compact(), seed)?;
    let image = uniform(&[1, 3, MODEL_SIZE, MODEL_SIZE], 0.0, 1.0, &mut rng);
    let gt = random_mask(MODEL_SIZE, MODEL_SIZE, &mut rng);
    let flags = TrainFlags {
        backbone: true,
        selector: true,
    };
    run_with_store(check, &store, vec![("image", image)], true, |f, v| {
        let out = model.forward(f, &v[0], Mode::Both, flags)?;
        let sel = wbce_loss(&out.selected.expect("both mode"), &[&gt], WbceParams::default())?;
        let base = wbce_loss(&out.baseline.expect("both mode"), &[&gt], WbceParams::default())?;
        Ok(sel.add(&base)?)
    })
}

/// Runs `trials` checks of each block.
pub fn block_suite(trials: usize, check: &GradCheck) -> Result<Vec<SuiteEntry>> {
    BLOCKS
        .iter()
        .map(|&name| {
            let reports = (0..trials)
                .map(|t| check_block(name, t as u64, check))
                .collect::<Result<Vec<_>>>()?;
            Ok(SuiteEntry::aggregate(name, &reports))
        })
        .collect()
}

/// Step used at model scope. The whole model has thousands of activation
/// kinks, and a 1e-3 step straddles one for almost every probe of a
/// widely shared parameter.
pub const MODEL_STEP: f64 = 1e-5;

/// Model-scope checks probe fewer coordinates per tensor, since the model
/// has about a hundred of them, and use [`MODEL_STEP`]. Several parameters
/// (conv biases feeding batch norm, attention key biases) have an exactly
/// zero gradient; at this step their difference quotients are pure rounding
/// noise of order 1e-8, hence the larger absolute floor.
pub fn model_suite(trials: usize, check: &GradCheck) -> Result<Vec<SuiteEntry>> {
    let check = GradCheck {
        step: check.step.min(MODEL_STEP),
        max_coords: check.max_coords.min(4),
        max_attempts: check.max_attempts.min(12),
        scale_floor: check.scale_floor.max(1e-3),
        ..check.clone()
    };
    let reports = (0..trials)
        .map(|t| check_model(t as u64, &check))
        .collect::<Result<Vec<_>>>()?;
    Ok(vec![SuiteEntry::aggregate(&format!("model_3x{MODEL_SIZE}x{MODEL_SIZE}"), &reports)])
}

pub fn run_scope(scope: Scope, trials: usize, check: &GradCheck) -> Result<Vec<SuiteEntry>> {
    match scope {
        Scope::Primitive => Ok(primitive_suite(trials, check)?),
        Scope::Block => block_suite(trials, check),
        Scope::Model => model_suite(trials, check),
    }
}
