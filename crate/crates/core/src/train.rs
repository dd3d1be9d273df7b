//! Three-stage training.

use std::time::Instant;

use edgesel_tensor::{Frame, ParamStore, Scalar, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{augment_epoch, Sample};
use crate::error::{Error, Result};
use crate::loss::{wbce_loss, WbceParams};
use crate::mask::Mask;
use crate::optim::Adam;
use crate::selector::{EdgeModel, Mode, Outputs, TrainFlags};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StagePlan {
    pub stage: u8,
}

impl StagePlan {
    pub fn new(stage: u8) -> Result<Self> {
        match stage {
            1..=3 => Ok(StagePlan { stage }),
            _ => Err(Error::Config(format!("stage must be 1, 2 or 3, got {stage}"))),
        }
    }

    /// Stage 1 trains the backbone, stage 2 the selector, stage 3 everything.
    pub fn trainable(&self, name: &str) -> bool {
        match self.stage {
            1 => name.starts_with("backbone."),
            2 => name.starts_with("selector."),
            _ => true,
        }
    }

    pub fn mode(&self) -> Mode {
        if self.stage == 1 {
            Mode::Baseline
        } else {
            Mode::Selected
        }
    }

    /// Frozen sub-networks run their batch norms on running statistics.
    pub fn flags(&self) -> TrainFlags {
        TrainFlags {
            backbone: self.stage != 2,
            selector: self.stage != 1,
        }
    }

    /// Stage 1: WBCE on every side map plus the baseline head. Later stages:
    /// WBCE on the selected output.
    pub fn loss<'t, T: Scalar>(&self, out: &Outputs<'t, T>, gts: &[&Mask], params: WbceParams) -> Result<Var<'t, T>> {
        if self.stage == 1 {
            let head = out.baseline.ok_or_else(|| Error::Contract("stage 1 needs the baseline head".into()))?;
            let mut total = wbce_loss(&head, gts, params)?;
            for side in &out.stack.sides {
                total = total.add(&wbce_loss(side, gts, params)?)?;
            }
            Ok(total)
        } else {
            let sel = out.selected.ok_or_else(|| Error::Contract("stages 2 and 3 need the selected output".into()))?;
            wbce_loss(&sel, gts, params)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub crop: usize,
    pub refresh_every: usize,
    pub wbce: WbceParams,
}

impl TrainConfig {
    pub fn from_run(cfg: &RunConfig, stage: u8) -> Self {
        TrainConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            batch: cfg.batch,
            epochs: cfg.epochs[(stage.clamp(1, 3) - 1) as usize],
            seed: cfg.seed,
            crop: cfg.crop,
            refresh_every: cfg.refresh_every,
            wbce: WbceParams {
                lambda: cfg.wbce_lambda,
                eps: cfg.wbce_eps,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
    pub wall_secs: f64,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        format!(
            "stage={} epoch={} loss={:.6} batches={} wall={:.2}s",
            self.stage, self.epoch, self.mean_loss, self.batches, self.wall_secs
        )
    }
}

/// Stacks crops into `[N, 3, c, c]`.
fn batch_tensor(images: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    Ok(Tensor::stack(images)?)
}

/// One optimization step on a batch; returns the loss value.
pub fn train_step(
    plan: &StagePlan,
    model: &EdgeModel,
    store: &mut ParamStore<f32>,
    adam: &mut Adam,
    images: &[Tensor<f32>],
    gts: &[&Mask],
    wbce: WbceParams,
) -> Result<f64> {
    let tape = Tape::new();
    let frame = Frame::new(&tape, store, true, |n| plan.trainable(n));
    let x = tape.constant(batch_tensor(images)?);
    let out = model.forward(&frame, &x, plan.mode(), plan.flags())?;
    let loss = plan.loss(&out, gts, wbce)?;
    let value = loss.item() as f64;
    if !value.is_finite() {
        return Err(Error::Contract(format!("non-finite loss {value}")));
    }
    store.zero_grads();
    let grads = tape.backward(loss)?;
    store.accumulate_grads(&frame, &grads);
    store.apply_updates(frame.take_updates());
    adam.step(store, |n| plan.trainable(n));
    Ok(value)
}

/// Runs every epoch of one stage, calling `on_epoch` after each.
pub fn run_stage(
    plan: &StagePlan,
    samples: &[Sample],
    model: &EdgeModel,
    store: &mut ParamStore<f32>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let set = augment_epoch(samples, epoch, cfg.seed, cfg.crop, cfg.refresh_every);
        if set.crops.is_empty() {
            return Err(Error::Contract(format!(
                "no sample is at least {}x{}; nothing to train on",
                cfg.crop, cfg.crop
            )));
        }
        let mut order: Vec<usize> = (0..set.crops.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::data::mix_seed(&[cfg.seed, plan.stage as u64, epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let (images, gts): (Vec<_>, Vec<_>) = chunk.iter().map(|&i| set.crops[i].materialize(samples)).unzip();
            let gt_refs: Vec<&Mask> = gts.iter().collect();
            total += train_step(plan, model, store, &mut adam, &images, &gt_refs, cfg.wbce)?;
            batches += 1;
        }
        let record = EpochRecord {
            stage: plan.stage,
            epoch,
            mean_loss: total / batches as f64,
            batches,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok(log)
}
