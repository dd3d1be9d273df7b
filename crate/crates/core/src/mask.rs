use crate::error::{Error, Result};

/// Binary `h × w` image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != h * w {
            return Err(Error::Contract(format!("mask {h}x{w} given {} values", bits.len())));
        }
        Ok(Mask { h, w, bits })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            bits: vec![false; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Mask {
            h,
            w,
            bits: (0..h * w).map(|i| f(i / w, i % w)).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.w + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Coordinates of set pixels in row-major order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.w, i % self.w))
            .collect()
    }
}

/// Single-channel probability map in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl EdgeMap {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Contract(format!("edge map {h}x{w} given {} values", data.len())));
        }
        Ok(EdgeMap { h, w, data })
    }

    pub fn from_mask(mask: &Mask) -> Self {
        EdgeMap {
            h: mask.h,
            w: mask.w,
            data: mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    /// Pixels with probability `>= t`.
    pub fn threshold(&self, t: f32) -> Mask {
        Mask {
            h: self.h,
            w: self.w,
            bits: self.data.iter().map(|&p| p >= t).collect(),
        }
    }

    /// 8-bit quantization, `round(255·p)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&p| (255.0 * p.clamp(0.0, 1.0)).round() as u8)
            .collect()
    }

    pub fn from_u8(h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        EdgeMap::new(h, w, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }
}
