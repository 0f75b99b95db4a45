//! Synthetic test scenes.
//!
//! All kinds are deterministic in `(kind, h, w, channels, peak, seed)`.
//! `GaussianBumps` and `Ramp` keep every forward difference below
//! `0.075 * peak`, so for `peak <= 4 * 2^b` the gradient magnitude stays
//! under `0.3 * 2^b`, comfortably inside the `2^(b-1)` band that makes the
//! centered re-wrap of the gradient exact. `Step` and `Checker` exist to
//! violate that bound on purpose.

use crate::error::{Error, Result};
use crate::image::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scene families for synthesis and tests.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// Sum of broad positive Gaussian blobs; smooth, gradient-bounded.
    GaussianBumps,
    /// Horizontal linear ramp `peak * j / (w - 1)`; seed-independent.
    Ramp,
    /// Left half 0, right half `peak`; breaks the gradient bound at the seam.
    Step,
    /// Alternating 0/`peak` tiles; breaks the bound at every tile edge.
    Checker,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-bumps" => Ok(SceneKind::GaussianBumps),
            "ramp" => Ok(SceneKind::Ramp),
            "step" => Ok(SceneKind::Step),
            "checker" => Ok(SceneKind::Checker),
            other => Err(Error::InvalidArgument(format!(
                "unknown scene kind '{other}' (expected gaussian-bumps|ramp|step|checker)"
            ))),
        }
    }
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::GaussianBumps => "gaussian-bumps",
            SceneKind::Ramp => "ramp",
            SceneKind::Step => "step",
            SceneKind::Checker => "checker",
        }
    }
}

// Minimum bump width in pixels. Amplitudes sum to `peak`, and the slope of
// a Gaussian of amplitude a and width s peaks at a * exp(-1/2) / s, so the
// total gradient stays below 0.607 * peak / MIN_SIGMA = 0.075 * peak.
const MIN_SIGMA: f64 = 10.0;
const AMPLITUDE_SPLIT: [f64; 4] = [0.55, 0.20, 0.15, 0.10];

/// Generates a deterministic scene with values in `[0, peak]`.
pub fn synth_scene(
    kind: SceneKind,
    h: usize,
    w: usize,
    channels: usize,
    peak: f64,
    seed: u64,
) -> Result<Image> {
    if h < 4 || w < 4 {
        return Err(Error::InvalidDimensions { h, w, min: 4 });
    }
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::InvalidArgument(format!("peak must be positive and finite, got {peak}")));
    }
    let mut img = Image::new(h, w, channels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ch in 0..channels {
        match kind {
            SceneKind::GaussianBumps => bumps_plane(img.plane_mut(ch), h, w, peak, &mut rng),
            SceneKind::Ramp => {
                let plane = img.plane_mut(ch);
                for i in 0..h {
                    for j in 0..w {
                        plane[i * w + j] = peak * j as f64 / (w - 1) as f64;
                    }
                }
            }
            SceneKind::Step => {
                let plane = img.plane_mut(ch);
                for i in 0..h {
                    for j in 0..w {
                        plane[i * w + j] = if j < w / 2 { 0.0 } else { peak };
                    }
                }
            }
            SceneKind::Checker => {
                let tile = (h.min(w) / 8).max(2);
                let plane = img.plane_mut(ch);
                for i in 0..h {
                    for j in 0..w {
                        plane[i * w + j] = if (i / tile + j / tile) % 2 == 0 { 0.0 } else { peak };
                    }
                }
            }
        }
    }
    Ok(img)
}

fn bumps_plane(plane: &mut [f64], h: usize, w: usize, peak: f64, rng: &mut ChaCha8Rng) {
    let max_sigma = MIN_SIGMA + 0.25 * h.max(w) as f64;
    for frac in AMPLITUDE_SPLIT {
        let ci = rng.gen_range(0.0..h as f64);
        let cj = rng.gen_range(0.0..w as f64);
        let s = rng.gen_range(MIN_SIGMA..max_sigma);
        let a = frac * peak;
        let inv = 1.0 / (2.0 * s * s);
        for i in 0..h {
            for j in 0..w {
                let di = i as f64 - ci;
                let dj = j as f64 - cj;
                plane[i * w + j] += a * (-(di * di + dj * dj) * inv).exp();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(img: &Image) -> f64 {
        let (h, w, c) = img.dims();
        let mut m: f64 = 0.0;
        for ch in 0..c {
            let p = img.plane(ch);
            for i in 0..h {
                for j in 0..w {
                    if j + 1 < w {
                        m = m.max((p[i * w + j + 1] - p[i * w + j]).abs());
                    }
                    if i + 1 < h {
                        m = m.max((p[(i + 1) * w + j] - p[i * w + j]).abs());
                    }
                }
            }
        }
        m
    }

    #[test]
    fn ramp_gradient_matches_closed_form() {
        let img = synth_scene(SceneKind::Ramp, 8, 256, 1, 1023.0, 0).unwrap();
        let d = max_abs_diff(&img);
        assert!((d - 1023.0 / 255.0).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn bumps_stay_in_range_and_smooth() {
        for seed in 0..20 {
            let img = synth_scene(SceneKind::GaussianBumps, 48, 64, 1, 1023.0, seed).unwrap();
            assert!(img.min_value() >= 0.0);
            assert!(img.max_value() <= 1023.0);
            assert!(max_abs_diff(&img) < 0.075 * 1023.0);
        }
    }

    #[test]
    fn bumps_are_deterministic_per_seed() {
        let a = synth_scene(SceneKind::GaussianBumps, 16, 16, 3, 255.0, 7).unwrap();
        let b = synth_scene(SceneKind::GaussianBumps, 16, 16, 3, 255.0, 7).unwrap();
        let c = synth_scene(SceneKind::GaussianBumps, 16, 16, 3, 255.0, 8).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
        // Channels are generated independently.
        assert_ne!(a.plane(0), a.plane(1));
    }

    #[test]
    fn step_violates_gradient_bound() {
        let img = synth_scene(SceneKind::Step, 16, 16, 1, 1023.0, 0).unwrap();
        assert!(max_abs_diff(&img) >= 256.0);
        let chk = synth_scene(SceneKind::Checker, 32, 32, 1, 1023.0, 0).unwrap();
        assert!(max_abs_diff(&chk) >= 256.0);
    }

    #[test]
    fn tiny_dimensions_are_rejected() {
        assert!(matches!(
            synth_scene(SceneKind::Ramp, 3, 64, 1, 255.0, 0),
            Err(Error::InvalidDimensions { .. })
        ));
        assert!(matches!(
            synth_scene(SceneKind::Ramp, 64, 2, 1, 255.0, 0),
            Err(Error::InvalidDimensions { .. })
        ));
    }
}
