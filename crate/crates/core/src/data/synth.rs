use std::path::Path;

use edgesel_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{augment::mix, write_gray, write_image, Sample};
use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Circle { cy: f64, cx: f64, r: f64 },
    /// Simple polygon, vertices in order.
    Polygon(Vec<(f64, f64)>),
    /// Thick segment.
    Bar { a: (f64, f64), b: (f64, f64), half_width: f64 },
}

impl Shape {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Circle { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Polygon(v) => {
                let mut inside = false;
                let mut j = v.len() - 1;
                for i in 0..v.len() {
                    let ((yi, xi), (yj, xj)) = (v[i], v[j]);
                    if (yi > y) != (yj > y) && x < xi + (y - yi) * (xj - xi) / (yj - yi) {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
            Shape::Bar { a, b, half_width } => {
                let (dy, dx) = (b.0 - a.0, b.1 - a.1);
                let len2 = dy * dy + dx * dx;
                let t = if len2 > 0.0 {
                    (((y - a.0) * dy + (x - a.1) * dx) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (py, px) = (a.0 + t * dy, a.1 + t * dx);
                (y - py).powi(2) + (x - px).powi(2) <= half_width * half_width
            }
        }
    }
}

/// Shapes painted in order over a background; shape `i` carries label `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub size: usize,
    pub shapes: Vec<Shape>,
    /// RGB per label, background first.
    pub colors: Vec<[f32; 3]>,
}

const MIN_CONTRAST: f32 = 0.6;

fn pick_color(rng: &mut impl Rng, taken: &[[f32; 3]]) -> [f32; 3] {
    let mut best = [0.0; 3];
    let mut best_gap = -1.0;
    for _ in 0..64 {
        let c = [rng.gen::<f32>(), rng.gen::<f32>(), rng.gen::<f32>()];
        let gap = taken
            .iter()
            .map(|t| t.iter().zip(&c).map(|(a, b)| (a - b).abs()).sum::<f32>())
            .fold(f32::INFINITY, f32::min);
        if gap >= MIN_CONTRAST {
            return c;
        }
        if gap > best_gap {
            best_gap = gap;
            best = c;
        }
    }
    best
}

impl Scene {
    pub fn random(size: usize, rng: &mut impl Rng) -> Self {
        let s = size as f64;
        let count = rng.gen_range(3..=6);
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let (cy, cx) = (rng.gen_range(0.15..0.85) * s, rng.gen_range(0.15..0.85) * s);
            shapes.push(match rng.gen_range(0..3) {
                0 => Shape::Circle {
                    cy,
                    cx,
                    r: rng.gen_range(0.08..0.3) * s,
                },
                1 => {
                    let n = rng.gen_range(3..=6);
                    let radius = rng.gen_range(0.1..0.35) * s;
                    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
                    angles.sort_by(f64::total_cmp);
                    Shape::Polygon(
                        angles
                            .iter()
                            .map(|a| {
                                let r = radius * rng.gen_range(0.6..1.0);
                                (cy + r * a.sin(), cx + r * a.cos())
                            })
                            .collect(),
                    )
                }
                _ => Shape::Bar {
                    a: (cy, cx),
                    b: (rng.gen_range(0.0..s), rng.gen_range(0.0..s)),
                    half_width: rng.gen_range(1.5..4.0),
                },
            });
        }
        let mut colors = Vec::with_capacity(count + 1);
        for _ in 0..=count {
            let c = pick_color(rng, &colors);
            colors.push(c);
        }
        Scene { size, shapes, colors }
    }

    pub fn label_at(&self, y: f64, x: f64) -> usize {
        self.shapes
            .iter()
            .enumerate()
            .rev()
            .find(|(_, s)| s.contains(y, x))
            .map_or(0, |(i, _)| i + 1)
    }

    /// Labels on a `SUPERSAMPLE`-times finer grid, `[size·SUPERSAMPLE]²`
    /// row-major, sampled at sub-cell centres.
    pub fn sublabels(&self) -> Vec<usize> {
        let n = self.size * SUPERSAMPLE;
        let f = SUPERSAMPLE as f64;
        (0..n * n)
            .map(|i| self.label_at(((i / n) as f64 + 0.5) / f, ((i % n) as f64 + 0.5) / f))
            .collect()
    }

    /// Anti-aliased image `[3, size, size]` (mean colour over each pixel's
    /// sub-samples) and its boundary mask.
    pub fn render(&self) -> (Tensor<f32>, Mask) {
        let n = self.size;
        let sub = self.sublabels();
        let row = n * SUPERSAMPLE;
        let mut out = vec![0.0f32; 3 * n * n];
        let k = (SUPERSAMPLE * SUPERSAMPLE) as f32;
        for p in 0..n * n {
            let (y, x) = (p / n, p % n);
            let mut acc = [0.0f32; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let l = sub[(y * SUPERSAMPLE + sy) * row + x * SUPERSAMPLE + sx];
                    for (a, c) in acc.iter_mut().zip(self.colors[l]) {
                        *a += c;
                    }
                }
            }
            for (c, a) in acc.iter().enumerate() {
                out[c * n * n + p] = a / k;
            }
        }
        let image = Tensor::new([3, n, n], out).expect("sized");
        (image, boundary_mask(&sub, n, n, SUPERSAMPLE))
    }
}

/// Sub-samples per pixel side.
pub const SUPERSAMPLE: usize = 4;

/// Pixels a region boundary passes through. A pixel is marked when its
/// `factor × factor` sub-labels are not all equal, or when the boundary runs
/// between one of its sub-samples and a neighbouring pixel's; in that case
/// only the side with the larger label is marked. Unmarked 4-neighbours thus
/// always share a label, so closed shapes get closed boundaries, and the rule
/// does not depend on grid orientation (rotated or flipped scenes get
/// rotated or flipped masks).
pub fn boundary_mask(sublabels: &[usize], h: usize, w: usize, factor: usize) -> Mask {
    let (rows, cols) = (h * factor, w * factor);
    let mut bits = vec![false; h * w];
    for sy in 0..rows {
        for sx in 0..cols {
            let here = sublabels[sy * cols + sx];
            let px = (sy / factor) * w + sx / factor;
            // right and down neighbours cover every adjacent pair once
            for (ny, nx) in [(sy, sx + 1), (sy + 1, sx)] {
                if ny >= rows || nx >= cols {
                    continue;
                }
                let there = sublabels[ny * cols + nx];
                if there == here {
                    continue;
                }
                let q = (ny / factor) * w + nx / factor;
                if q == px {
                    bits[px] = true;
                } else if here > there {
                    bits[px] = true;
                } else {
                    bits[q] = true;
                }
            }
        }
    }
    Mask::new(h, w, bits).expect("sized")
}

/// `n` square scenes with their rasterized boundaries as ground truth. With
/// `texture`, Gaussian pixel noise (σ = 0.03) is added to the image.
pub fn synth_dataset(n: usize, size: usize, seed: u64, texture: bool) -> Result<Vec<Sample>> {
    if size < 32 {
        return Err(Error::Config(format!("synthetic images need size >= 32, got {size}")));
    }
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, i as u64]));
            let scene = Scene::random(size, &mut rng);
            let (mut image, gt) = scene.render();
            if texture {
                let noise = Normal::new(0.0f32, 0.03).expect("valid sigma");
                for v in image.data_mut() {
                    *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            Sample::new(format!("synth_{i:04}"), image, gt)
        })
        .collect()
}

/// Writes `dir/images/<id>.png` and `dir/edges/<id>.png`.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    for sub in ["images", "edges"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    for s in samples {
        write_image(&dir.join("images").join(format!("{}.png", s.id)), &s.image)?;
        let bytes: Vec<u8> = s.gt.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_gray(&dir.join("edges").join(format!("{}.png", s.id)), s.height(), s.width(), &bytes)?;
    }
    Ok(())
}
