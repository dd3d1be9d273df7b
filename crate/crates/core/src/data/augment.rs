use edgesel_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::mask::Mask;

/// One training crop, stored as provenance and materialized on demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Crop {
    /// Index into the sample list the set was built from.
    pub source: usize,
    /// Counter-clockwise quarter turns, applied before the flip.
    pub rotation: u8,
    /// Horizontal flip.
    pub flip: bool,
    /// Offset in the oriented frame.
    pub y: usize,
    pub x: usize,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedEpochSet {
    pub epoch: usize,
    /// Crops are redrawn whenever this changes.
    pub window: usize,
    pub seed: u64,
    pub crops: Vec<Crop>,
    /// Samples smaller than the crop size, skipped.
    pub dropped: usize,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x51_7cc1_b727_220a, |h, &p| splitmix(h ^ p))
}

/// Eight orientation variants per usable sample, each with one random
/// `crop × crop` window. Offsets depend only on `epoch / refresh_every`, so
/// they are redrawn at epochs `refresh_every`, `2·refresh_every`, ...
pub fn augment_epoch(samples: &[Sample], epoch: usize, seed: u64, crop: usize, refresh_every: usize) -> AugmentedEpochSet {
    let window = epoch / refresh_every.max(1);
    let mut crops = Vec::new();
    let mut dropped = 0;
    for (source, s) in samples.iter().enumerate() {
        let (h, w) = (s.height(), s.width());
        if h < crop || w < crop {
            dropped += 1;
            continue;
        }
        for variant in 0..8u8 {
            let (rotation, flip) = (variant / 2, variant % 2 == 1);
            let (oh, ow) = if rotation % 2 == 1 { (w, h) } else { (h, w) };
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, window as u64, source as u64, variant as u64]));
            crops.push(Crop {
                source,
                rotation,
                flip,
                y: rng.gen_range(0..=oh - crop),
                x: rng.gen_range(0..=ow - crop),
                size: crop,
            });
        }
    }
    if dropped > 0 {
        log::warn!("augmentation: dropped {dropped} samples smaller than {crop}x{crop}");
    }
    AugmentedEpochSet {
        epoch,
        window,
        seed,
        crops,
        dropped,
    }
}

/// Source pixel shown at `(y, x)` of an `h × w` image after `rotation`
/// counter-clockwise quarter turns followed by an optional horizontal flip.
pub fn source_coord(rotation: u8, flip: bool, h: usize, w: usize, y: usize, x: usize) -> (usize, usize) {
    let (mut oh, mut ow) = if rotation % 2 == 1 { (w, h) } else { (h, w) };
    let (mut y, mut x) = (y, if flip { ow - 1 - x } else { x });
    for _ in 0..rotation % 4 {
        // Undo one turn: new(y, x) = old(x, old_w − 1 − y), old_w = oh.
        (y, x) = (x, oh - 1 - y);
        std::mem::swap(&mut oh, &mut ow);
    }
    (y, x)
}

impl Crop {
    /// Image `[3, size, size]` and edges of this crop.
    pub fn materialize(&self, samples: &[Sample]) -> (Tensor<f32>, Mask) {
        let s = &samples[self.source];
        let (h, w, c) = (s.height(), s.width(), self.size);
        let coords: Vec<(usize, usize)> = (0..c * c)
            .map(|i| source_coord(self.rotation, self.flip, h, w, self.y + i / c, self.x + i % c))
            .collect();
        let src = s.image.data();
        let image = Tensor::from_fn([3, c, c], |i| {
            let (ch, p) = (i / (c * c), i % (c * c));
            let (sy, sx) = coords[p];
            src[ch * h * w + sy * w + sx]
        });
        let gt = Mask::from_fn(c, c, |y, x| {
            let (sy, sx) = coords[y * c + x];
            s.gt.get(sy, sx)
        });
        (image, gt)
    }
}
