//! Global Reinhard tone mapping for display of reconstructed HDR content.

use crate::error::{Error, Result};
use crate::image::Image;

/// BT.709 luma coefficients.
const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Global Reinhard operator on the luminance channel.
///
/// Scales the input by the exposure `alpha`, compresses luminance with
/// `L / (L + beta)`, and applies the resulting per-pixel gain to every
/// channel: `out = alpha * x * L_tm / (L + epsilon)`. Grayscale images use
/// the sample itself as luminance; RGB uses BT.709 coefficients.
///
/// Output luminance stays strictly below 1 for finite nonnegative input.
/// Individual channels of highly saturated colors can exceed the luminance
/// bound, since the gain is shared across channels.
pub fn reinhard_tonemap(x: &Image, alpha: f64, beta: f64, epsilon: f64) -> Result<Image> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "exposure alpha must be positive and finite, got {alpha}"
        )));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    if let Some(&v) = x.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::NegativeInput(v));
    }

    let (h, w, c) = x.dims();
    let mut out = Image::new(h, w, c)?;
    for i in 0..h {
        for j in 0..w {
            let lum = if c == 1 {
                alpha * x.at(i, j, 0)
            } else {
                (0..3).map(|ch| LUMA[ch] * alpha * x.at(i, j, ch)).sum()
            };
            let gain = lum / (lum + beta) / (lum + epsilon);
            for ch in 0..c {
                out.set(i, j, ch, alpha * x.at(i, j, ch) * gain);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::Mix64;

    const EPS: f64 = 1e-6;

    #[test]
    fn zero_maps_to_zero() {
        let z = Image::new(6, 6, 3).unwrap();
        let out = reinhard_tonemap(&z, 2.0, 0.5, EPS).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gray_pixel_at_beta_maps_to_half() {
        // L = beta gives L_tm = 0.5; the epsilon correction is O(1e-6).
        let beta = 0.75;
        let img = Image::new(4, 4, 1).unwrap().map(|_| beta);
        let out = reinhard_tonemap(&img, 1.0, beta, EPS).unwrap();
        for &v in out.data() {
            assert!((v - 0.5).abs() < 1e-5, "got {v}");
        }

        // Same luminance realized through an achromatic RGB pixel.
        let rgb = Image::new(4, 4, 3).unwrap().map(|_| beta);
        let out = reinhard_tonemap(&rgb, 1.0, beta, EPS).unwrap();
        for &v in out.data() {
            assert!((v - 0.5).abs() < 1e-4, "got {v}");
        }
    }

    #[test]
    fn grayscale_output_below_one_and_monotone() {
        let mut rng = Mix64::new(7);
        let img = Image::from_fn(8, 8, 1, |_, _, _| 1e6 * rng.next_f64()).unwrap();
        let out = reinhard_tonemap(&img, 4.0, 0.25, EPS).unwrap();
        for &v in out.data() {
            assert!((0.0..1.0).contains(&v), "out of range: {v}");
        }

        // Scaling a gray image up never decreases any output value.
        let brighter = reinhard_tonemap(&img.map(|v| 3.0 * v), 4.0, 0.25, EPS).unwrap();
        for (a, b) in out.data().iter().zip(brighter.data()) {
            assert!(b >= a, "brightening decreased {a} -> {b}");
        }

        // Luminance compression saturates: huge inputs approach 1.
        let hot = Image::new(2, 2, 1).unwrap().map(|_| 1e12);
        let out = reinhard_tonemap(&hot, 1.0, 1.0, EPS).unwrap();
        for &v in out.data() {
            assert!(v < 1.0 && v > 0.999, "got {v}");
        }
    }

    #[test]
    fn achromatic_rgb_output_below_one() {
        // Channel-independent values: achromatic pixels at a wide range of
        // brightness levels.
        let img = Image::from_fn(8, 8, 3, |i, j, _| 1e3 * ((i * 8 + j) as f64 + 1.0)).unwrap();
        let out = reinhard_tonemap(&img, 2.0, 0.5, EPS).unwrap();
        for &v in out.data() {
            assert!((0.0..1.0).contains(&v), "out of range: {v}");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let img = Image::new(4, 4, 1).unwrap();
        assert!(matches!(
            reinhard_tonemap(&img, 0.0, 0.5, EPS),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            reinhard_tonemap(&img, 1.0, -1.0, EPS),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            reinhard_tonemap(&img, 1.0, 0.5, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        let neg = img.map(|_| -3.0);
        assert!(matches!(
            reinhard_tonemap(&neg, 1.0, 0.5, EPS),
            Err(Error::NegativeInput(v)) if v == -3.0
        ));
        let nan = img.map(|_| f64::NAN);
        assert!(matches!(
            reinhard_tonemap(&nan, 1.0, 0.5, EPS),
            Err(Error::NegativeInput(_))
        ));
    }
}
