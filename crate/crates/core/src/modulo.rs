//! Self-reset (modulo) sensor model.
//!
//! A modulo sensor with bit depth `b` stores `W_b(x) = x - 2^b * floor(x / 2^b)`,
//! folding radiance into `[0, 2^b)`. Under read noise the measurement is
//! `y = W_b(x + eta)` with `eta ~ N(0, sigma^2 I)`; because `W_b` commutes with
//! addition modulo `2^b`, this equals `W_b(W_b(x) + eta)` and noise can be
//! applied before or after folding interchangeably.

use crate::error::Result;
use crate::image::{BitDepth, Image};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Folds `t` into `[0, 2^b)`.
///
/// Division and multiplication by the power-of-two modulus are exact in
/// binary floating point, so the result is the exact remainder.
#[inline]
pub fn wrap_scalar(t: f64, b: BitDepth) -> f64 {
    let m = b.modulus();
    t - m * (t / m).floor()
}

/// Maps `t` to its centered representative in `[-2^(b-1), 2^(b-1))`.
///
/// Rounds to the nearest multiple of `2^b`, sending exact half-multiples
/// upward so the half-open interval holds on both ends: `M_b(2^(b-1)) =
/// -2^(b-1)` and `M_b(-2^(b-1)) = -2^(b-1)`.
#[inline]
pub fn centered_mod_scalar(t: f64, b: BitDepth) -> f64 {
    let m = b.modulus();
    t - m * (t / m + 0.5).floor()
}

/// Elementwise [`wrap_scalar`].
pub fn wrap(x: &Image, b: BitDepth) -> Image {
    let mut out = x.map(|t| wrap_scalar(t, b));
    out.bit_depth_hint = Some(b.bits());
    out
}

/// Elementwise [`centered_mod_scalar`].
pub fn centered_mod(x: &Image, b: BitDepth) -> Image {
    x.map(|t| centered_mod_scalar(t, b))
}

/// Additive white Gaussian read noise in DN units.
///
/// Fields are sampled from a ChaCha8 stream seeded with `seed`, in planar
/// row-major order, using the Box-Muller-free ziggurat of `rand_distr`.
/// Identical `(sigma, seed, shape)` always reproduce the same field bit for
/// bit; channels share one stream, so each channel's noise is independent.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Self {
        NoiseModel { sigma, seed }
    }

    /// The noise field added to a `(h, w, c)` image, as its own image.
    pub fn field(&self, h: usize, w: usize, c: usize) -> Result<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut img = Image::new(h, w, c)?;
        for v in img.data_mut().iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v = self.sigma * n;
        }
        Ok(img)
    }
}

/// Simulates a measurement: `y = W_b(x + eta)`.
pub fn sense(x: &Image, b: BitDepth, noise: &NoiseModel) -> Result<Image> {
    let (h, w, c) = x.dims();
    let eta = noise.field(h, w, c)?;
    let mut sum = x.clone();
    for (s, n) in sum.data_mut().iter_mut().zip(eta.data().iter()) {
        *s += n;
    }
    Ok(wrap(&sum, b))
}

/// Linearly rescales `x` so its maximum equals `2^target - 1`.
///
/// An input with no positive sample is returned unchanged (there is no
/// scale that maps it onto the target range).
pub fn standardize_bits(x: &Image, target: BitDepth) -> Image {
    let max = x.max_value();
    if max <= 0.0 {
        return x.clone();
    }
    let scale = target.peak() / max;
    let mut out = x.map(|v| v * scale);
    out.bit_depth_hint = Some(target.bits());
    out
}
