//! Planar floating-point image storage.
//!
//! Pixel values are stored as `f64` in digital-number (DN) units, one
//! contiguous plane per channel: `data[ch * h * w + i * w + j]`. Values are
//! kept unquantized inside the library; rounding to integers happens only at
//! the PNG I/O boundary.

use crate::error::{Error, Result};

/// A grayscale (1-channel) or RGB (3-channel) image of `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    c: usize,
    /// Nominal bit depth of the content, when known (set by synthesis and
    /// PNG reads). Purely advisory; no operation changes values based on it.
    pub bit_depth_hint: Option<u32>,
    data: Vec<f64>,
}

impl Image {
    /// Zero-filled image. `channels` must be 1 or 3.
    pub fn new(h: usize, w: usize, channels: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidDimensions { h, w, min: 1 });
        }
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedChannels(channels));
        }
        Ok(Image {
            h,
            w,
            c: channels,
            bit_depth_hint: None,
            data: vec![0.0; h * w * channels],
        })
    }

    /// Wraps an existing planar buffer of length `h * w * channels`.
    pub fn from_vec(h: usize, w: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let mut img = Image::new(h, w, channels)?;
        if data.len() != img.data.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} samples", img.data.len()),
                got: format!("{}", data.len()),
            });
        }
        img.data = data;
        Ok(img)
    }

    /// Builds an image by evaluating `f(i, j, ch)` at every sample.
    pub fn from_fn(h: usize, w: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut img = Image::new(h, w, channels)?;
        for ch in 0..channels {
            for i in 0..h {
                for j in 0..w {
                    let v = f(i, j, ch);
                    img.data[ch * h * w + i * w + j] = v;
                }
            }
        }
        Ok(img)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    /// (height, width, channels)
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.h * self.w..(ch + 1) * self.h * self.w]
    }

    pub fn plane_mut(&mut self, ch: usize) -> &mut [f64] {
        let hw = self.h * self.w;
        &mut self.data[ch * hw..(ch + 1) * hw]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.data[ch * self.h * self.w + i * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, ch: usize, v: f64) {
        self.data[ch * self.h * self.w + i * self.w + j] = v;
    }

    /// Elementwise map, preserving shape and bit-depth hint.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = f(*v);
        }
        out
    }

    /// Checks that `other` has identical dimensions.
    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.dims()),
                got: format!("{:?}", other.dims()),
            });
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Sensor bit depth `b`; the self-reset modulus is `2^b`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct BitDepth(u32);

impl BitDepth {
    pub fn new(bits: u32) -> Result<Self> {
        if bits == 0 || bits > 24 {
            return Err(Error::UnsupportedBitDepth(bits));
        }
        Ok(BitDepth(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    /// `2^b`, exact in f64 for all supported depths.
    pub fn modulus(self) -> f64 {
        (1u64 << self.0) as f64
    }

    /// `2^(b-1)`, the half-range of the centered representative.
    pub fn half_modulus(self) -> f64 {
        self.modulus() * 0.5
    }

    /// Largest representable integer sample, `2^b - 1`.
    pub fn peak(self) -> f64 {
        self.modulus() - 1.0
    }
}
