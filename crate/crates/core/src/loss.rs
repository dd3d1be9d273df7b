//! Class-balanced binary cross-entropy.

use edgesel_tensor::{Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WbceParams {
    pub lambda: f64,
    /// Predictions are clamped to `[eps, 1 − eps]`.
    pub eps: f64,
}

impl Default for WbceParams {
    fn default() -> Self {
        WbceParams { lambda: 1.1, eps: 1e-6 }
    }
}

/// Fraction of negative pixels, `|Y⁻| / |Y|`.
pub fn alpha(gt: &Mask) -> f64 {
    let total = gt.bits().len();
    if total == 0 {
        return 0.0;
    }
    (total - gt.count()) as f64 / total as f64
}

/// `−α Σ_{Y⁺} log ŷ − λ(1−α) Σ_{Y⁻} log(1−ŷ)` per image, averaged over the
/// batch. `pred` is `[N, 1, H, W]` (or any shape with N·H·W elements laid
/// out image by image).
pub fn wbce_loss<'t, T: Scalar>(pred: &Var<'t, T>, gts: &[&Mask], params: WbceParams) -> Result<Var<'t, T>> {
    if gts.is_empty() {
        return Err(Error::Contract("wbce_loss needs at least one ground truth".into()));
    }
    let shape = pred.shape();
    let per_image: usize = gts[0].bits().len();
    if gts.iter().any(|g| g.bits().len() != per_image) || shape.iter().product::<usize>() != per_image * gts.len() || shape[0] != gts.len() {
        return Err(Error::Contract(format!("prediction {shape:?} does not match {} ground truths", gts.len())));
    }
    let mut pos = Vec::with_capacity(per_image * gts.len());
    let mut neg = Vec::with_capacity(per_image * gts.len());
    for gt in gts {
        let a = alpha(gt);
        for &y in gt.bits() {
            pos.push(T::of(if y { a } else { 0.0 }));
            neg.push(T::of(if y { 0.0 } else { params.lambda * (1.0 - a) }));
        }
    }
    let pos = Tensor::new(shape.clone(), pos)?;
    let neg = Tensor::new(shape, neg)?;

    let p = pred.clamp(T::of(params.eps), T::of(1.0 - params.eps))?;
    let log_p = p.log()?;
    let log_q = p.scale(-T::one())?.add_scalar(T::one())?.log()?;
    let total = log_p.mul_const(&pos)?.add(&log_q.mul_const(&neg)?)?.sum()?;
    Ok(total.scale(-T::one() / T::of(gts.len() as f64))?)
}
