//! Datasets, augmentation, synthetic scenes and tiled inference.

mod augment;
mod synth;
mod tiling;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use edgesel_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use augment::{augment_epoch, mix as mix_seed, source_coord, AugmentedEpochSet, Crop};
pub use synth::{boundary_mask, synth_dataset, write_dataset, Scene, Shape, SUPERSAMPLE};
pub use tiling::{predict, reflect_pad, tiled_predict, Rect, TilePlan};

use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub gt: Mask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, gt: Mask) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 3 || s[1] != gt.height() || s[2] != gt.width() {
            return Err(Error::Contract(format!(
                "image {s:?} and ground truth {}x{} disagree",
                gt.height(),
                gt.width()
            )));
        }
        Ok(Sample {
            id: id.into(),
            image,
            gt,
        })
    }

    pub fn height(&self) -> usize {
        self.gt.height()
    }

    pub fn width(&self) -> usize {
        self.gt.width()
    }
}

/// Seeded shuffle of `0..n`, then the first `round(ratio·n)` go to training.
pub fn split_indices(n: usize, seed: u64, ratio: f64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * ratio).round() as usize;
    let eval = idx.split_off(n_train.min(n));
    (idx, eval)
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("png")) != Some(true) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let data = (0..3 * h * w)
        .map(|i| {
            let (c, p) = (i / (h * w), i % (h * w));
            raw[3 * p + c] as f32 / 255.0
        })
        .collect();
    Ok(Tensor::new([3, h, w], data)?)
}

/// Grayscale edge map; values `>= 128` are edges.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Mask::new(h, w, img.as_raw().iter().map(|&v| v >= 128).collect())
}

pub fn write_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    let (h, w) = (s[1], s[2]);
    let mut raw = vec![0u8; 3 * h * w];
    for c in 0..3 {
        for p in 0..h * w {
            raw[3 * p + c] = (255.0 * image.data()[c * h * w + p].clamp(0.0, 1.0)).round() as u8;
        }
    }
    image::save_buffer(path, &raw, w as u32, h as u32, image::ColorType::Rgb8).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_gray(path: &Path, h: usize, w: usize, bytes: &[u8]) -> Result<()> {
    image::save_buffer(path, bytes, w as u32, h as u32, image::ColorType::L8).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads every `root/images/<stem>.png` with its `root/edges/<stem>.png`.
/// All problems are collected before failing. Samples come back sorted by id.
pub fn read_dataset(root: &Path) -> Result<Vec<Sample>> {
    let images = png_stems(&root.join("images"))?;
    let edges = png_stems(&root.join("edges"))?;
    let mut problems = Vec::new();
    for stem in edges.keys().filter(|s| !images.contains_key(*s)) {
        problems.push(format!("{stem}: edge map without image"));
    }
    let pairs: Vec<_> = images
        .iter()
        .filter_map(|(stem, img)| match edges.get(stem) {
            Some(edge) => Some((stem.clone(), img.clone(), edge.clone())),
            None => {
                problems.push(format!("{stem}: image without edge map"));
                None
            }
        })
        .collect();
    let loaded: Vec<Result<Sample>> = pairs
        .par_iter()
        .map(|(stem, img, edge)| {
            let image = read_image(img)?;
            let gt = read_mask(edge)?;
            Sample::new(stem.clone(), image, gt).map_err(|e| Error::Contract(format!("size mismatch: {e}")))
        })
        .collect();
    let mut samples = Vec::new();
    for ((stem, _, _), r) in pairs.iter().zip(loaded) {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => problems.push(format!("{stem}: {e}")),
        }
    }
    if !problems.is_empty() {
        problems.sort();
        return Err(Error::Ingest(problems));
    }
    if samples.is_empty() {
        return Err(Error::Ingest(vec![format!("{}: no samples found", root.display())]));
    }
    Ok(samples)
}

/// Seeded train/eval split of a dataset directory.
pub fn load_dataset(root: &Path, split_seed: u64, ratio: f64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let samples = read_dataset(root)?;
    Ok(split_samples(samples, split_seed, ratio))
}

pub fn split_samples(samples: Vec<Sample>, seed: u64, ratio: f64) -> (Vec<Sample>, Vec<Sample>) {
    let (train, eval) = split_indices(samples.len(), seed, ratio);
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: Vec<usize>| idx.into_iter().map(|i| slots[i].take().expect("index used once")).collect::<Vec<_>>();
    let train = take(train);
    let eval = take(eval);
    (train, eval)
}

/// Halves a sample (2×2 mean for the image, 2×2 max for the edges, odd
/// extents floored) until both extents are below `limit`, or at most
/// `limit` when `inclusive`.
pub fn downscale_halving(sample: &Sample, limit: usize, inclusive: bool) -> Sample {
    let fits = |h: usize, w: usize| if inclusive { h <= limit && w <= limit } else { h < limit && w < limit };
    let mut cur = sample.clone();
    while !fits(cur.height(), cur.width()) && cur.height() >= 2 && cur.width() >= 2 {
        cur = halve(&cur);
    }
    cur
}

fn halve(s: &Sample) -> Sample {
    let (h, w) = (s.height(), s.width());
    let (nh, nw) = (h / 2, w / 2);
    let src = s.image.data();
    let image = Tensor::from_fn([3, nh, nw], |i| {
        let (c, y, x) = (i / (nh * nw), (i / nw) % nh, i % nw);
        let at = |dy: usize, dx: usize| src[c * h * w + (2 * y + dy) * w + 2 * x + dx];
        (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * 0.25
    });
    let gt = Mask::from_fn(nh, nw, |y, x| {
        s.gt.get(2 * y, 2 * x) || s.gt.get(2 * y, 2 * x + 1) || s.gt.get(2 * y + 1, 2 * x) || s.gt.get(2 * y + 1, 2 * x + 1)
    });
    Sample {
        id: s.id.clone(),
        image,
        gt,
    }
}
