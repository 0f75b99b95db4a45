//! Image-quality metrics and DC alignment.
//!
//! All metrics treat images as plain sample grids: channels are pooled into
//! one mean rather than weighted by a color model. PSNR variants report
//! decibels through [`Db`], which keeps the "identical inputs" case as an
//! explicit flag instead of an IEEE infinity so reports serialize cleanly.
//!
//! Unwrapping recovers a scene only up to additive constants, so comparisons
//! against ground truth go through [`align_dc`] first; [`evaluate`] bundles
//! alignment, the four metrics, and a per-channel breakdown into a
//! [`MetricReport`].

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::{BitDepth, Image};

/// SSIM window side (11x11 Gaussian).
const SSIM_WIN: usize = 11;
/// SSIM Gaussian standard deviation.
const SSIM_SIGMA: f64 = 1.5;
/// SSIM stabilizers for unit dynamic range: (K1*L)^2 and (K2*L)^2 with
/// K1=0.01, K2=0.03, L=1.
const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;
/// Q-index window side (8x8 box).
const Q_WIN: usize = 8;
/// mu-law compression strength (HDR-imaging convention).
const MU: f64 = 5000.0;

/// A decibel value that may be the "zero error" limit.
///
/// JSON has no literal for infinity, so `Infinite` serializes as the string
/// `"inf"` while finite values serialize as plain numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Db {
    Finite(f64),
    Infinite,
}

impl Db {
    pub fn is_infinite(self) -> bool {
        matches!(self, Db::Infinite)
    }

    /// Numeric view; `Infinite` maps to `f64::INFINITY`.
    pub fn value(self) -> f64 {
        match self {
            Db::Finite(v) => v,
            Db::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Db {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Db::Finite(v) => write!(f, "{v}"),
            Db::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Db::Finite(v) => s.serialize_f64(*v),
            Db::Infinite => s.serialize_str("inf"),
        }
    }
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    a.same_shape(b)
}

/// Mean squared error over all samples and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n)
}

/// PSNR in the linear domain: `10 log10(peak^2 / MSE)`.
pub fn psnr_l(reference: &Image, estimate: &Image, peak: f64) -> Result<Db> {
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "psnr peak must be positive and finite, got {peak}"
        )));
    }
    let e = mse(reference, estimate)?;
    if e == 0.0 {
        return Ok(Db::Infinite);
    }
    Ok(Db::Finite(10.0 * (peak * peak / e).log10()))
}

/// Normalized 11-tap Gaussian for the SSIM window.
fn ssim_kernel() -> [f64; SSIM_WIN] {
    let mut g = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    for (k, gk) in g.iter_mut().enumerate() {
        let d = k as f64 - c;
        *gk = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = g.iter().sum();
    for gk in &mut g {
        *gk /= sum;
    }
    g
}

/// Separable valid-mode weighted sums: output is (h-10) x (w-10).
fn valid_filter(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WIN]) -> Vec<f64> {
    let wo = w - (SSIM_WIN - 1);
    let ho = h - (SSIM_WIN - 1);
    let mut tmp = vec![0.0; h * wo];
    for i in 0..h {
        for j in 0..wo {
            let mut s = 0.0;
            for (k, &gk) in g.iter().enumerate() {
                s += gk * plane[i * w + j + k];
            }
            tmp[i * wo + j] = s;
        }
    }
    let mut out = vec![0.0; ho * wo];
    for i in 0..ho {
        for j in 0..wo {
            let mut s = 0.0;
            for (k, &gk) in g.iter().enumerate() {
                s += gk * tmp[(i + k) * wo + j];
            }
            out[i * wo + j] = s;
        }
    }
    out
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).
///
/// Inputs must already be normalized to [0, 1]; the stabilizers assume unit
/// dynamic range. The mean runs over fully interior window positions only
/// (no padding), pooled across channels.
pub fn ssim(reference: &Image, estimate: &Image) -> Result<f64> {
    check_pair(reference, estimate)?;
    let (h, w, c) = reference.dims();
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(Error::ImageTooSmall { h, w, win: SSIM_WIN });
    }
    let g = ssim_kernel();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x = reference.plane(ch);
        let y = estimate.plane(ch);
        let xx: Vec<f64> = x.iter().map(|&v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|&v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
        let mu1 = valid_filter(x, h, w, &g);
        let mu2 = valid_filter(y, h, w, &g);
        let m11 = valid_filter(&xx, h, w, &g);
        let m22 = valid_filter(&yy, h, w, &g);
        let m12 = valid_filter(&xy, h, w, &g);
        for idx in 0..mu1.len() {
            let (a, b) = (mu1[idx], mu2[idx]);
            let v1 = m11[idx] - a * a;
            let v2 = m22[idx] - b * b;
            let cov = m12[idx] - a * b;
            let num = (2.0 * a * b + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (a * a + b * b + SSIM_C1) * (v1 + v2 + SSIM_C2);
            total += num / den;
        }
        count += mu1.len();
    }
    Ok(total / count as f64)
}

/// Summed-area table with a zero border row/column.
fn sat(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let w1 = w + 1;
    let mut t = vec![0.0; (h + 1) * w1];
    for i in 0..h {
        let mut row = 0.0;
        for j in 0..w {
            row += plane[i * w + j];
            t[(i + 1) * w1 + (j + 1)] = t[i * w1 + (j + 1)] + row;
        }
    }
    t
}

/// Sum of the n x n window whose top-left corner is (i, j).
fn window_sum(t: &[f64], w: usize, i: usize, j: usize, n: usize) -> f64 {
    let w1 = w + 1;
    t[(i + n) * w1 + (j + n)] - t[i * w1 + (j + n)] - t[(i + n) * w1 + j] + t[i * w1 + j]
}

/// Per-window universal quality index from raw window sums.
///
/// Degenerate handling follows the original reference implementation: start
/// from 1, apply the luminance-only value when the contrast denominator
/// vanishes but the means do not, and the full formula whenever the combined
/// denominator is nonzero. The two rewrites are mutually exclusive.
fn q_window(s1: f64, s2: f64, s11: f64, s22: f64, s12: f64, n: f64) -> f64 {
    let mul = s1 * s2;
    let sqs = s1 * s1 + s2 * s2;
    let den1 = n * (s11 + s22) - sqs;
    let den = den1 * sqs;
    if den != 0.0 {
        let num = 4.0 * (n * s12 - mul) * mul;
        num / den
    } else if sqs != 0.0 {
        2.0 * mul / sqs
    } else {
        1.0
    }
}

/// Universal quality index over 8x8 sliding windows, pooled across channels.
pub fn q_index(reference: &Image, estimate: &Image) -> Result<f64> {
    check_pair(reference, estimate)?;
    let (h, w, c) = reference.dims();
    if h < Q_WIN || w < Q_WIN {
        return Err(Error::ImageTooSmall { h, w, win: Q_WIN });
    }
    let n = (Q_WIN * Q_WIN) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x = reference.plane(ch);
        let y = estimate.plane(ch);
        let xx: Vec<f64> = x.iter().map(|&v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|&v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
        let t1 = sat(x, h, w);
        let t2 = sat(y, h, w);
        let t11 = sat(&xx, h, w);
        let t22 = sat(&yy, h, w);
        let t12 = sat(&xy, h, w);
        for i in 0..=h - Q_WIN {
            for j in 0..=w - Q_WIN {
                total += q_window(
                    window_sum(&t1, w, i, j, Q_WIN),
                    window_sum(&t2, w, i, j, Q_WIN),
                    window_sum(&t11, w, i, j, Q_WIN),
                    window_sum(&t22, w, i, j, Q_WIN),
                    window_sum(&t12, w, i, j, Q_WIN),
                    n,
                );
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// mu-law encoder on [0, 1]: `log(1 + 5000 v) / log(1 + 5000)`.
///
/// Inputs are clamped to [0, 1] first; reconstructions can dip slightly
/// negative or overshoot the peak, and the curve is only defined on the
/// unit interval.
pub fn mu_encode(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    (1.0 + MU * v).ln() / (1.0 + MU).ln()
}

/// PSNR after mu-law encoding, emphasizing dark-region errors.
///
/// Both images are normalized by `peak`, passed through [`mu_encode`], and
/// compared with [`psnr_l`] at unit peak.
pub fn psnr_mu(reference: &Image, estimate: &Image, peak: f64) -> Result<Db> {
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "psnr peak must be positive and finite, got {peak}"
        )));
    }
    check_pair(reference, estimate)?;
    let enc_r = reference.map(|v| mu_encode(v / peak));
    let enc_e = estimate.map(|v| mu_encode(v / peak));
    psnr_l(&enc_r, &enc_e, 1.0)
}

/// How [`align_dc`] chooses the additive shift applied to the estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlignMode {
    /// Leave the estimate untouched.
    None,
    /// Shift the estimate so its mean matches the reference mean.
    Mean,
    /// Mean shift snapped to the nearest multiple of the wrap modulus, so
    /// only whole-period offsets are forgiven.
    Snap(BitDepth),
}

impl AlignMode {
    pub fn name(&self) -> &'static str {
        match self {
            AlignMode::None => "none",
            AlignMode::Mean => "mean",
            AlignMode::Snap(_) => "snap",
        }
    }
}

/// Removes the additive ambiguity left by unwrapping before comparison.
pub fn align_dc(reference: &Image, estimate: &Image, mode: AlignMode) -> Result<Image> {
    check_pair(reference, estimate)?;
    let shift = match mode {
        AlignMode::None => 0.0,
        AlignMode::Mean => reference.mean() - estimate.mean(),
        AlignMode::Snap(b) => {
            let m = b.modulus();
            m * ((reference.mean() - estimate.mean()) / m).round()
        }
    };
    Ok(estimate.map(|v| v + shift))
}

/// Metrics for one channel of a comparison.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChannelMetrics {
    pub psnr_l: Db,
    pub ssim_l: f64,
    pub q_index: f64,
    pub psnr_mu: Db,
}

/// Full comparison result: pooled metrics, per-channel breakdown, and the
/// alignment mode that was applied.
///
/// Serializes to JSON via [`MetricReport::to_json`] and to a CSV row whose
/// column order is [`MetricReport::CSV_HEADER`].
#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub psnr_l: Db,
    pub ssim_l: f64,
    pub q_index: f64,
    pub psnr_mu: Db,
    pub per_channel: Vec<ChannelMetrics>,
    pub alignment_mode: String,
}

impl MetricReport {
    /// Column order of [`MetricReport::csv_row`].
    pub const CSV_HEADER: &'static str = "psnr_l,ssim_l,q_index,psnr_mu,alignment_mode";

    /// One CSV row matching [`MetricReport::CSV_HEADER`] (pooled metrics only).
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.psnr_l, self.ssim_l, self.q_index, self.psnr_mu, self.alignment_mode
        )
    }

    /// Sorted-key pretty JSON, stable for golden-file comparisons.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }
}

fn metrics_for(reference: &Image, estimate: &Image, peak: f64) -> Result<(Db, f64, f64, Db)> {
    let p = psnr_l(reference, estimate, peak)?;
    let s = ssim(
        &reference.map(|v| v / peak),
        &estimate.map(|v| v / peak),
    )?;
    let q = q_index(reference, estimate)?;
    let pm = psnr_mu(reference, estimate, peak)?;
    Ok((p, s, q, pm))
}

/// Aligns the estimate, evaluates all four metrics pooled and per channel.
///
/// When `peak` is `None` it defaults to `2^b - 1` from the reference's
/// `bit_depth_hint`, falling back to 10-bit (1023) when no hint is set.
pub fn evaluate(
    reference: &Image,
    estimate: &Image,
    peak: Option<f64>,
    mode: AlignMode,
) -> Result<MetricReport> {
    let peak = peak.unwrap_or_else(|| match reference.bit_depth_hint {
        Some(b) => (2f64).powi(b as i32) - 1.0,
        None => 1023.0,
    });
    let aligned = align_dc(reference, estimate, mode)?;
    let (p, s, q, pm) = metrics_for(reference, &aligned, peak)?;
    let (h, w, c) = reference.dims();
    let mut per_channel = Vec::with_capacity(c);
    for ch in 0..c {
        let r = Image::from_vec(h, w, 1, reference.plane(ch).to_vec())?;
        let e = Image::from_vec(h, w, 1, aligned.plane(ch).to_vec())?;
        let (p, s, q, pm) = metrics_for(&r, &e, peak)?;
        per_channel.push(ChannelMetrics {
            psnr_l: p,
            ssim_l: s,
            q_index: q,
            psnr_mu: pm,
        });
    }
    Ok(MetricReport {
        psnr_l: p,
        ssim_l: s,
        q_index: q,
        psnr_mu: pm,
        per_channel,
        alignment_mode: mode.name().to_string(),
    })
}
