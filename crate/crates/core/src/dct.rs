//! Orthonormal 2-D DCT (type II) and its exact inverse (type III).
//!
//! The forward transform of a length-n signal is
//! `X[k] = s(k) * sum_i x[i] * cos(pi * k * (2i + 1) / (2n))` with
//! `s(0) = sqrt(1/n)` and `s(k) = sqrt(2/n)` otherwise, applied separably
//! along rows then columns. Orthonormality makes the inverse the transpose,
//! so `idct2(dct2(x)) == x` to roundoff and the pair is energy-preserving.
//!
//! Lengths below [`FFT_THRESHOLD`] use a cached cosine matrix (O(n^2) per
//! 1-D transform); longer lengths go through a same-length complex FFT
//! using the even/odd reordering identity. Both paths meet the same
//! tolerance against the direct double sum.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::image::Image;

/// Lengths shorter than this use the cosine-matrix path.
const FFT_THRESHOLD: usize = 32;

struct Plan {
    n: usize,
    /// `cos(pi * k * (2i + 1) / (2n))` at `k * n + i`; empty on the FFT path.
    basis: Vec<f64>,
    fft: Option<FftPair>,
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `exp(-i * pi * k / (2n))` for k in 0..n.
    twiddle: Vec<Complex<f64>>,
}

fn plan_for(n: usize) -> Arc<Plan> {
    static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Plan>>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(n).or_insert_with(|| Arc::new(Plan::new(n))).clone()
}

impl Plan {
    fn new(n: usize) -> Plan {
        if n < FFT_THRESHOLD {
            let mut basis = vec![0.0; n * n];
            for k in 0..n {
                for i in 0..n {
                    basis[k * n + i] =
                        (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos();
                }
            }
            Plan { n, basis, fft: None }
        } else {
            let mut planner = FftPlanner::new();
            let twiddle = (0..n)
                .map(|k| Complex::from_polar(1.0, -std::f64::consts::PI * k as f64 / (2 * n) as f64))
                .collect();
            Plan {
                n,
                basis: Vec::new(),
                fft: Some(FftPair {
                    forward: planner.plan_fft_forward(n),
                    inverse: planner.plan_fft_inverse(n),
                    twiddle,
                }),
            }
        }
    }

    fn scale(&self, k: usize) -> f64 {
        if k == 0 {
            (1.0 / self.n as f64).sqrt()
        } else {
            (2.0 / self.n as f64).sqrt()
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        match &self.fft {
            None => self.forward_direct(x, out),
            Some(p) => self.forward_fft(p, x, out),
        }
    }

    fn inverse(&self, x: &[f64], out: &mut [f64]) {
        match &self.fft {
            None => self.inverse_direct(x, out),
            Some(p) => self.inverse_fft(p, x, out),
        }
    }

    fn forward_direct(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let row = &self.basis[k * n..(k + 1) * n];
            let mut acc = 0.0;
            for i in 0..n {
                acc += row[i] * x[i];
            }
            out[k] = self.scale(k) * acc;
        }
    }

    fn inverse_direct(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        out[..n].fill(0.0);
        for k in 0..n {
            let row = &self.basis[k * n..(k + 1) * n];
            let coef = self.scale(k) * x[k];
            for i in 0..n {
                out[i] += coef * row[i];
            }
        }
    }

    // Even samples in order, odd samples reversed, one n-point FFT:
    // sum_i x[i] cos(pi k (2i+1) / 2n) = Re(twiddle[k] * V[k]).
    fn forward_fft(&self, p: &FftPair, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for j in 0..n.div_ceil(2) {
            buf[j] = Complex::new(x[2 * j], 0.0);
        }
        for j in 0..n / 2 {
            buf[n - 1 - j] = Complex::new(x[2 * j + 1], 0.0);
        }
        p.forward.process(&mut buf);
        for k in 0..n {
            out[k] = self.scale(k) * (p.twiddle[k] * buf[k]).re;
        }
    }

    // Inverse of forward_fft: rebuild the Hermitian spectrum from the real
    // cosine coefficients, invert the FFT, undo the reordering.
    fn inverse_fft(&self, p: &FftPair, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let c: Vec<f64> = (0..n).map(|k| x[k] / self.scale(k)).collect();
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        buf[0] = Complex::new(c[0], 0.0);
        for k in 1..n {
            buf[k] = p.twiddle[k].conj() * Complex::new(c[k], -c[n - k]);
        }
        p.inverse.process(&mut buf);
        let inv_n = 1.0 / n as f64;
        for j in 0..n.div_ceil(2) {
            out[2 * j] = buf[j].re * inv_n;
        }
        for j in 0..n / 2 {
            out[2 * j + 1] = buf[n - 1 - j].re * inv_n;
        }
    }
}

fn transform_plane(plane: &mut [f64], h: usize, w: usize, forward: bool) {
    let row_plan = plan_for(w);
    let col_plan = plan_for(h);
    let mut row_out = vec![0.0; w];
    for i in 0..h {
        let row = &mut plane[i * w..(i + 1) * w];
        if forward {
            row_plan.forward(row, &mut row_out);
        } else {
            row_plan.inverse(row, &mut row_out);
        }
        row.copy_from_slice(&row_out);
    }
    let mut col_in = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for j in 0..w {
        for i in 0..h {
            col_in[i] = plane[i * w + j];
        }
        if forward {
            col_plan.forward(&col_in, &mut col_out);
        } else {
            col_plan.inverse(&col_in, &mut col_out);
        }
        for i in 0..h {
            plane[i * w + j] = col_out[i];
        }
    }
}

/// Orthonormal 2-D DCT-II of each channel; coefficient `[0][0]` of a
/// constant plane `c` is `c * sqrt(h * w)`.
pub fn dct2(x: &Image) -> Image {
    let (h, w, c) = x.dims();
    let mut out = x.clone();
    for ch in 0..c {
        transform_plane(out.plane_mut(ch), h, w, true);
    }
    out
}

/// Exact inverse of [`dct2`] (orthonormal 2-D DCT-III per channel).
pub fn idct2(x: &Image) -> Image {
    let (h, w, c) = x.dims();
    let mut out = x.clone();
    for ch in 0..c {
        transform_plane(out.plane_mut(ch), h, w, false);
    }
    out
}

/// In-place plane transforms for callers working on raw buffers.
pub(crate) fn dct2_plane(plane: &mut [f64], h: usize, w: usize) {
    transform_plane(plane, h, w, true);
}

pub(crate) fn idct2_plane(plane: &mut [f64], h: usize, w: usize) {
    transform_plane(plane, h, w, false);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::Mix64;

    /// O(n^2) double sum straight from the definition.
    fn naive_1d(x: &[f64], forward: bool) -> Vec<f64> {
        let n = x.len();
        let s = |k: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        let cos = |k: usize, i: usize| {
            (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
        };
        (0..n)
            .map(|a| {
                if forward {
                    s(a) * (0..n).map(|i| x[i] * cos(a, i)).sum::<f64>()
                } else {
                    (0..n).map(|k| s(k) * x[k] * cos(k, a)).sum::<f64>()
                }
            })
            .collect()
    }

    fn random_vec(rng: &mut Mix64, n: usize) -> Vec<f64> {
        (0..n).map(|_| (rng.next_f64() - 0.5) * 100.0).collect()
    }

    #[test]
    fn both_paths_match_definition() {
        let mut rng = Mix64::new(1);
        // Straddles FFT_THRESHOLD; includes odd, prime and power-of-two n.
        for n in [1, 2, 3, 5, 7, 8, 13, 16, 31, 32, 33, 47, 64, 97] {
            let x = random_vec(&mut rng, n);
            let plan = Plan::new(n);
            let mut fwd = vec![0.0; n];
            plan.forward(&x, &mut fwd);
            let want = naive_1d(&x, true);
            for k in 0..n {
                assert!((fwd[k] - want[k]).abs() < 1e-9, "n={n} k={k}");
            }
            let mut inv = vec![0.0; n];
            plan.inverse(&x, &mut inv);
            let want = naive_1d(&x, false);
            for i in 0..n {
                assert!((inv[i] - want[i]).abs() < 1e-9, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn fft_and_direct_paths_agree() {
        let mut rng = Mix64::new(2);
        for n in [32, 33, 47, 64, 100] {
            let x = random_vec(&mut rng, n);
            let direct = {
                // Force the matrix path regardless of threshold.
                let mut p = Plan::new(2);
                p.n = n;
                p.basis = (0..n * n)
                    .map(|kn| {
                        let (k, i) = (kn / n, kn % n);
                        (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
                    })
                    .collect();
                p.fft = None;
                let mut out = vec![0.0; n];
                p.forward(&x, &mut out);
                out
            };
            let plan = Plan::new(n);
            assert!(plan.fft.is_some());
            let mut fast = vec![0.0; n];
            plan.forward(&x, &mut fast);
            for k in 0..n {
                assert!((fast[k] - direct[k]).abs() < 1e-9, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn constant_plane_concentrates_at_dc() {
        let img = Image::from_fn(12, 18, 1, |_, _, _| 3.25).unwrap();
        let spec = dct2(&img);
        let expect_dc = 3.25 * (12.0_f64 * 18.0).sqrt();
        assert!((spec.at(0, 0, 0) - expect_dc).abs() < 1e-10);
        for (idx, v) in spec.data().iter().enumerate() {
            if idx != 0 {
                assert!(v.abs() < 1e-10, "coefficient {idx} = {v}");
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = Mix64::new(3);
        for (h, w) in [(7, 5), (16, 16), (33, 47), (64, 40)] {
            let img = Image::from_fn(h, w, 1, |_, _, _| (rng.next_f64() - 0.5) * 2000.0).unwrap();
            let back = idct2(&dct2(&img));
            for (a, b) in back.data().iter().zip(img.data().iter()) {
                assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn matches_naive_2d_double_sum() {
        // Full O(n^4) separately-written 2-D definition on a 4x4.
        let mut rng = Mix64::new(4);
        let (h, w) = (4, 4);
        let img = Image::from_fn(h, w, 1, |_, _, _| (rng.next_f64() - 0.5) * 10.0).unwrap();
        let spec = dct2(&img);
        let s = |k: usize, n: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for m in 0..h {
            for n in 0..w {
                let mut acc = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        acc += img.at(i, j, 0)
                            * (std::f64::consts::PI * m as f64 * (2 * i + 1) as f64 / (2 * h) as f64).cos()
                            * (std::f64::consts::PI * n as f64 * (2 * j + 1) as f64 / (2 * w) as f64).cos();
                    }
                }
                let want = s(m, h) * s(n, w) * acc;
                assert!((spec.at(m, n, 0) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn energy_is_preserved() {
        let mut rng = Mix64::new(5);
        let img = Image::from_fn(40, 33, 1, |_, _, _| (rng.next_f64() - 0.5) * 50.0).unwrap();
        let spec = dct2(&img);
        let e_img: f64 = img.data().iter().map(|v| v * v).sum();
        let e_spec: f64 = spec.data().iter().map(|v| v * v).sum();
        assert!((e_img - e_spec).abs() < 1e-8 * e_img);
    }
}
