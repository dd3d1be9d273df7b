use edgesel_tensor::kernels::bicubic::reflect;
use edgesel_tensor::{Frame, ParamStore, Tape, Tensor};

use crate::error::{Error, Result};
use crate::mask::EdgeMap;
use crate::selector::{EdgeModel, Mode, TrainFlags};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

/// Non-overlapping `tile × tile` grid over the image padded up to multiples
/// of `tile`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilePlan {
    pub height: usize,
    pub width: usize,
    pub tile: usize,
    pub padded_h: usize,
    pub padded_w: usize,
    pub tiles: Vec<Rect>,
}

impl TilePlan {
    pub fn new(height: usize, width: usize, tile: usize) -> Self {
        let padded_h = height.div_ceil(tile).max(1) * tile;
        let padded_w = width.div_ceil(tile).max(1) * tile;
        let mut tiles = Vec::new();
        for y in (0..padded_h).step_by(tile) {
            for x in (0..padded_w).step_by(tile) {
                tiles.push(Rect { y, x, h: tile, w: tile });
            }
        }
        TilePlan {
            height,
            width,
            tile,
            padded_h,
            padded_w,
            tiles,
        }
    }
}

/// Mirror-pads `[C, H, W]` on the bottom and right to `[C, ph, pw]`.
pub fn reflect_pad(image: &Tensor<f32>, ph: usize, pw: usize) -> Tensor<f32> {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let src = image.data();
    Tensor::from_fn([c, ph, pw], |i| {
        let (ch, y, x) = (i / (ph * pw), (i / pw) % ph, i % pw);
        src[ch * h * w + reflect(y as isize, h) * w + reflect(x as isize, w)]
    })
}

/// Eval-mode prediction of one `[3, H, W]` image whose extents already fit
/// the model alignment.
pub fn predict(model: &EdgeModel, store: &ParamStore<f32>, image: &Tensor<f32>, mode: Mode) -> Result<EdgeMap> {
    let s = image.shape().to_vec();
    let tape = Tape::new();
    let frame = Frame::new(&tape, store, false, |_| false);
    let x = tape.constant(image.clone().reshape(vec![1, s[0], s[1], s[2]])?);
    let out = model.forward(&frame, &x, mode, TrainFlags::EVAL)?;
    let edge = out.edge(mode).expect("requested head");
    let values = edge.tensor().into_data();
    EdgeMap::new(s[1], s[2], values)
}

/// Pads, predicts every tile independently, and stitches the crops back.
pub fn tiled_predict(model: &EdgeModel, store: &ParamStore<f32>, image: &Tensor<f32>, tile: usize, mode: Mode) -> Result<EdgeMap> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Contract(format!("expected a [3,H,W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plan = TilePlan::new(h, w, tile);
    let padded = reflect_pad(image, plan.padded_h, plan.padded_w);
    let (ph, pw) = (plan.padded_h, plan.padded_w);
    let mut out = vec![0.0f32; h * w];
    for r in &plan.tiles {
        let piece = Tensor::from_fn([3, r.h, r.w], |i| {
            let (c, y, x) = (i / (r.h * r.w), (i / r.w) % r.h, i % r.w);
            padded.data()[c * ph * pw + (r.y + y) * pw + r.x + x]
        });
        let pred = predict(model, store, &piece, mode).map_err(|e| match e {
            Error::Tensor(inner) => Error::Contract(format!("tile at ({}, {}): {inner}", r.y, r.x)),
            Error::Contract(msg) => Error::Contract(format!("tile at ({}, {}): {msg}", r.y, r.x)),
            other => other,
        })?;
        for y in 0..r.h.min(h.saturating_sub(r.y)) {
            for x in 0..r.w.min(w.saturating_sub(r.x)) {
                out[(r.y + y) * w + r.x + x] = pred.get(y, x);
            }
        }
    }
    EdgeMap::new(h, w, out)
}
