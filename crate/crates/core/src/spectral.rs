//! Closed-form spectral solves for the gradient data term.
//!
//! Both entry points minimize `||Dx - v||^2` variants by diagonalizing the
//! Neumann Laplacian `D^T D` in the DCT-II basis, whose eigenvalues are
//! `(2 - 2cos(pi m / M)) + (2 - 2cos(pi n / N))`.

use crate::dct::{dct2_plane, idct2_plane};
use crate::error::{Error, Result};
use crate::grad::{divergence, GradientField};
use crate::image::Image;

/// Precomputed spectral denominator for one `(h, w, rho)` triple:
/// `denom[m][n] = 2 * (2 + rho/4 - cos(pi m / h) - cos(pi n / w))`.
#[derive(Clone, Debug)]
pub struct SpectralGrid {
    pub h: usize,
    pub w: usize,
    pub rho: f64,
    denom: Vec<f64>,
}

impl SpectralGrid {
    /// Requires `rho > 0` and finite; the `rho = 0` limit lives in
    /// [`poisson_integrate`], which pins the undetermined DC mode itself.
    pub fn new(h: usize, w: usize, rho: f64) -> Result<SpectralGrid> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidRho(rho));
        }
        Ok(SpectralGrid { h, w, rho, denom: build_denom(h, w, rho) })
    }

    pub fn denom(&self) -> &[f64] {
        &self.denom
    }
}

fn build_denom(h: usize, w: usize, rho: f64) -> Vec<f64> {
    let mut denom = vec![0.0; h * w];
    for m in 0..h {
        let cm = (std::f64::consts::PI * m as f64 / h as f64).cos();
        for n in 0..w {
            let cn = (std::f64::consts::PI * n as f64 / w as f64).cos();
            denom[m * w + n] = 2.0 * (2.0 + rho / 4.0 - cm - cn);
        }
    }
    denom
}

/// Exact minimizer of `||Dx - v||^2 + (rho/2) * ||x - x_tilde||^2`
/// per channel: `idct2(dct2(div(v) + (rho/2) x_tilde) / denom)`.
pub fn x_update(v: &GradientField, x_tilde: &Image, rho: f64) -> Result<Image> {
    let (h, w, c) = x_tilde.dims();
    if v.dims() != (h, w, c) {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", (h, w, c)),
            got: format!("{:?}", v.dims()),
        });
    }
    let grid = SpectralGrid::new(h, w, rho)?;
    let mut out = divergence(v);
    let half_rho = rho / 2.0;
    for (o, t) in out.data_mut().iter_mut().zip(x_tilde.data().iter()) {
        *o += half_rho * t;
    }
    for ch in 0..c {
        let plane = out.plane_mut(ch);
        dct2_plane(plane, h, w);
        for (p, d) in plane.iter_mut().zip(grid.denom.iter()) {
            *p /= d;
        }
        idct2_plane(plane, h, w);
    }
    Ok(out)
}

/// Least-squares integration of a gradient field (the `rho -> 0` limit of
/// [`x_update`]): among all `x` minimizing `||Dx - v||^2`, returns the one
/// with `mean(x) == dc`.
pub fn poisson_integrate(v: &GradientField, dc: f64) -> Result<Image> {
    let (h, w, c) = v.dims();
    let denom = build_denom(h, w, 0.0);
    let mut out = divergence(v);
    let dc_coef = dc * ((h * w) as f64).sqrt();
    for ch in 0..c {
        let plane = out.plane_mut(ch);
        dct2_plane(plane, h, w);
        plane[0] = dc_coef;
        for (idx, p) in plane.iter_mut().enumerate() {
            if idx != 0 {
                *p /= denom[idx];
            }
        }
        idct2_plane(plane, h, w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::forward_diff;
    use crate::testutil::Mix64;

    #[test]
    fn dc_denominator_equals_half_rho() {
        for rho in [0.1, 1.0, 10.0] {
            let g = SpectralGrid::new(6, 9, rho).unwrap();
            assert!((g.denom()[0] - rho / 2.0).abs() < 1e-14);
            assert!(g.denom().iter().all(|&d| d > 0.0));
        }
    }

    #[test]
    fn rejects_nonpositive_rho() {
        assert!(matches!(SpectralGrid::new(4, 4, 0.0), Err(Error::InvalidRho(_))));
        assert!(matches!(SpectralGrid::new(4, 4, -1.0), Err(Error::InvalidRho(_))));
        assert!(matches!(SpectralGrid::new(4, 4, f64::NAN), Err(Error::InvalidRho(_))));
        let g = GradientField::zeros(4, 4, 1);
        let x = Image::new(4, 4, 1).unwrap();
        assert!(x_update(&g, &x, -2.0).is_err());
    }

    #[test]
    fn zero_gradient_returns_prior_exactly() {
        let g = GradientField::zeros(5, 8, 1);
        for rho in [0.1, 1.0, 10.0] {
            let x_tilde = Image::from_fn(5, 8, 1, |_, _, _| 7.75).unwrap();
            let x = x_update(&g, &x_tilde, rho).unwrap();
            for v in x.data() {
                assert!((v - 7.75).abs() < 1e-10, "rho {rho}: {v}");
            }
        }
    }

    #[test]
    fn huge_rho_pins_output_to_prior() {
        let mut rng = Mix64::new(21);
        let x_tilde = Image::from_fn(8, 8, 1, |_, _, _| rng.next_f64() * 100.0 + 10.0).unwrap();
        let mut g = GradientField::zeros(8, 8, 1);
        g.dh_mut().iter_mut().for_each(|v| *v = rng.next_f64() - 0.5);
        g.dv_mut().iter_mut().for_each(|v| *v = rng.next_f64() - 0.5);
        let x = x_update(&g, &x_tilde, 1e8).unwrap();
        for (a, b) in x.data().iter().zip(x_tilde.data().iter()) {
            assert!(((a - b) / b).abs() < 1e-6);
        }
    }

    #[test]
    fn x_update_is_linear_in_inputs() {
        let mut rng = Mix64::new(22);
        let rho = 0.7;
        let mk_grad = |rng: &mut Mix64| {
            let mut g = GradientField::zeros(6, 7, 1);
            g.dh_mut().iter_mut().for_each(|v| *v = rng.next_f64() - 0.5);
            g.dv_mut().iter_mut().for_each(|v| *v = rng.next_f64() - 0.5);
            g
        };
        let g1 = mk_grad(&mut rng);
        let g2 = mk_grad(&mut rng);
        let t1 = Image::from_fn(6, 7, 1, |_, _, _| rng.next_f64()).unwrap();
        let t2 = Image::from_fn(6, 7, 1, |_, _, _| rng.next_f64()).unwrap();

        let mut gsum = g1.clone();
        gsum.dh_mut().iter_mut().zip(g2.dh()).for_each(|(a, b)| *a += b);
        gsum.dv_mut().iter_mut().zip(g2.dv()).for_each(|(a, b)| *a += b);
        let tsum = Image::from_fn(6, 7, 1, |i, j, c| t1.at(i, j, c) + t2.at(i, j, c)).unwrap();

        let lhs = x_update(&gsum, &tsum, rho).unwrap();
        let r1 = x_update(&g1, &t1, rho).unwrap();
        let r2 = x_update(&g2, &t2, rho).unwrap();
        for idx in 0..lhs.data().len() {
            let want = r1.data()[idx] + r2.data()[idx];
            assert!((lhs.data()[idx] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn poisson_integrates_forward_differences_exactly() {
        let mut rng = Mix64::new(23);
        let x = Image::from_fn(12, 10, 1, |_, _, _| rng.next_f64() * 4.0 - 2.0).unwrap();
        let g = forward_diff(&x);
        let out = poisson_integrate(&g, 0.5).unwrap();
        let shift = x.mean() - 0.5;
        for (o, t) in out.data().iter().zip(x.data().iter()) {
            assert!((o - (t - shift)).abs() < 1e-8, "{o} vs {}", t - shift);
        }
        assert!((out.mean() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn poisson_of_zero_field_is_constant_dc() {
        let g = GradientField::zeros(9, 4, 1);
        let out = poisson_integrate(&g, 3.5).unwrap();
        for v in out.data() {
            assert!((v - 3.5).abs() < 1e-10);
        }
    }
}
