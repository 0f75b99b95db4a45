//! Forward differences, their exact adjoint, and the re-wrapped gradient.
//!
//! The difference operator uses Neumann boundaries: the forward difference
//! is zero at the last row/column, which makes `divergence(forward_diff(x))`
//! the reflected 5-point Laplacian that the DCT-II basis diagonalizes.

use crate::error::Result;
use crate::image::{BitDepth, Image};
use crate::modulo::centered_mod_scalar;

/// Horizontal and vertical forward differences of an image, stored as two
/// planar buffers with the same `(h, w, c)` shape as the source.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    h: usize,
    w: usize,
    c: usize,
    dh: Vec<f64>,
    dv: Vec<f64>,
}

impl GradientField {
    pub fn zeros(h: usize, w: usize, c: usize) -> GradientField {
        GradientField { h, w, c, dh: vec![0.0; h * w * c], dv: vec![0.0; h * w * c] }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn dh(&self) -> &[f64] {
        &self.dh
    }

    pub fn dv(&self) -> &[f64] {
        &self.dv
    }

    pub fn dh_mut(&mut self) -> &mut [f64] {
        &mut self.dh
    }

    pub fn dv_mut(&mut self) -> &mut [f64] {
        &mut self.dv
    }

    /// Largest absolute component over both directions.
    pub fn max_abs(&self) -> f64 {
        self.dh
            .iter()
            .chain(self.dv.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Applies `f` to every component of both directions.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> GradientField {
        let mut out = self.clone();
        out.dh.iter_mut().for_each(|v| *v = f(*v));
        out.dv.iter_mut().for_each(|v| *v = f(*v));
        out
    }
}

/// Plane-level forward differences over `c` planar channels; the tape ops
/// share these loops with the public image API.
pub(crate) fn forward_diff_buf(src: &[f64], h: usize, w: usize, c: usize, dh: &mut [f64], dv: &mut [f64]) {
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h {
            for j in 0..w {
                let idx = base + i * w + j;
                dh[idx] = if j + 1 < w { src[idx + 1] - src[idx] } else { 0.0 };
                dv[idx] = if i + 1 < h { src[idx + w] - src[idx] } else { 0.0 };
            }
        }
    }
}

pub(crate) fn divergence_buf(dh: &[f64], dv: &[f64], h: usize, w: usize, c: usize, out: &mut [f64]) {
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h {
            for j in 0..w {
                let idx = base + i * w + j;
                let mut acc = 0.0;
                if j > 0 {
                    acc += dh[idx - 1];
                }
                if j + 1 < w {
                    acc -= dh[idx];
                }
                if i > 0 {
                    acc += dv[idx - w];
                }
                if i + 1 < h {
                    acc -= dv[idx];
                }
                out[idx] = acc;
            }
        }
    }
}

/// Forward differences with a zero last row/column:
/// `dh[i][j] = x[i][j+1] - x[i][j]` for `j < w-1`, else 0, and likewise
/// vertically.
pub fn forward_diff(x: &Image) -> GradientField {
    let (h, w, c) = x.dims();
    let mut g = GradientField::zeros(h, w, c);
    forward_diff_buf(x.data(), h, w, c, &mut g.dh, &mut g.dv);
    g
}

/// The exact adjoint of [`forward_diff`]: for a gradient field `g`,
/// `<forward_diff(x), g> == <x, divergence(g)>` for every `x`.
pub fn divergence(g: &GradientField) -> Image {
    let (h, w, c) = g.dims();
    let mut out = Image::new(h, w, c).expect("gradient fields carry valid image shapes");
    divergence_buf(&g.dh, &g.dv, h, w, c, out.data_mut());
    out
}

/// Centered re-wrap of the measured gradient: `M_b(forward_diff(y))`.
///
/// When the latent scene's differences stay inside `[-2^(b-1), 2^(b-1))`,
/// this recovers them exactly from the folded measurement.
pub fn wrapped_gradient(y: &Image, b: BitDepth) -> GradientField {
    forward_diff(y).map(|v| centered_mod_scalar(v, b))
}

/// Inner product of two same-shape images (test and solver utility).
pub fn image_dot(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    Ok(a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).sum())
}
