//! Denoisers for the z-subproblem: identity, sliding median, DCT
//! coefficient thresholding, and a small residual CNN conditioned on the
//! noise level.

use crate::dct::{dct2_plane, idct2_plane};
use crate::error::{Error, Result};
use crate::image::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// How DCT thresholding treats coefficients relative to `tau = tau0 * sigma`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Zero every non-DC coefficient with magnitude below `tau`.
    Hard,
    /// Shrink every non-DC coefficient toward zero by `tau`.
    Soft,
}

/// Architecture of the residual conv denoiser.
///
/// The network is `out = in + s * cnn([in / s, sigma / s])` with `s =
/// sigma_scale`: the image and a constant noise plane are normalized by the
/// sensor modulus, run through `num_blocks + 2` convolutions (3x3, stride 1,
/// symmetric-reflect padding, ReLU between layers, linear head), and the
/// rescaled result is added back. All-zero weights therefore reproduce the
/// input exactly.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvArch {
    /// Image channels the network consumes and produces (1 or 3); the input
    /// layer sees one extra noise-plane channel.
    pub channels: usize,
    /// Feature channels of the hidden layers.
    pub base_channels: usize,
    /// Number of hidden base-to-base conv layers (at least 1).
    pub num_blocks: usize,
    /// Normalization constant for image and noise plane; `2^b` of the
    /// sensor the denoiser is trained for (256 for the 8-bit default).
    pub sigma_scale: f64,
}

impl ConvArch {
    pub fn small(channels: usize) -> ConvArch {
        ConvArch { channels, base_channels: 8, num_blocks: 3, sigma_scale: 256.0 }
    }

    pub fn medium(channels: usize) -> ConvArch {
        ConvArch { channels, base_channels: 16, num_blocks: 3, sigma_scale: 256.0 }
    }

    pub fn large(channels: usize) -> ConvArch {
        ConvArch { channels, base_channels: 32, num_blocks: 3, sigma_scale: 256.0 }
    }

    pub fn preset(name: &str, channels: usize) -> Result<ConvArch> {
        match name {
            "small" => Ok(ConvArch::small(channels)),
            "medium" => Ok(ConvArch::medium(channels)),
            "large" => Ok(ConvArch::large(channels)),
            other => Err(Error::InvalidArgument(format!(
                "unknown denoiser preset '{other}' (expected small|medium|large)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::UnsupportedChannels(self.channels));
        }
        if self.base_channels == 0 || self.num_blocks == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv arch needs base_channels >= 1 and num_blocks >= 1, got {self:?}"
            )));
        }
        if !(self.sigma_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma_scale must be positive, got {}", self.sigma_scale)));
        }
        Ok(())
    }

    /// `(in_channels, out_channels, relu)` per layer, input to head.
    pub fn layers(&self) -> Vec<(usize, usize, bool)> {
        let b = self.base_channels;
        let mut v = vec![(self.channels + 1, b, true)];
        for _ in 0..self.num_blocks {
            v.push((b, b, true));
        }
        v.push((b, self.channels, false));
        v
    }
}

/// Denoiser selection plus its hyperparameters.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DenoiserSpec {
    Identity,
    /// Per-channel sliding median over an odd `window x window` neighborhood
    /// with symmetric-reflect borders.
    Median { window: usize },
    /// Per-channel DCT-domain thresholding at `tau0 * sigma`; the DC
    /// coefficient is never touched.
    DctThreshold { tau0: f64, mode: ThresholdMode },
    Conv(ConvArch),
}

impl DenoiserSpec {
    pub fn default_median() -> DenoiserSpec {
        DenoiserSpec::Median { window: 3 }
    }

    pub fn default_dct_threshold() -> DenoiserSpec {
        DenoiserSpec::DctThreshold { tau0: 3.0, mode: ThresholdMode::Hard }
    }
}

/// One named weight tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, shape: Vec<usize>) -> Tensor {
        let len = shape.iter().product();
        Tensor { name: name.to_string(), shape, data: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Weights for a [`ConvArch`]: alternating `convK.weight` / `convK.bias`
/// tensors, weight shape `[out, in, 3, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserWeights {
    pub arch: ConvArch,
    pub tensors: Vec<Tensor>,
}

impl DenoiserWeights {
    /// All-zero weights; the residual network is then exactly the identity.
    pub fn zeros(arch: ConvArch) -> Result<DenoiserWeights> {
        arch.validate()?;
        let mut tensors = Vec::new();
        for (idx, (cin, cout, _)) in arch.layers().into_iter().enumerate() {
            tensors.push(Tensor::zeros(&format!("conv{idx}.weight"), vec![cout, cin, 3, 3]));
            tensors.push(Tensor::zeros(&format!("conv{idx}.bias"), vec![cout]));
        }
        Ok(DenoiserWeights { arch, tensors })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Checks tensor names and shapes against the architecture.
    pub fn validate(&self) -> Result<()> {
        let want = DenoiserWeights::zeros(self.arch)?;
        if want.tensors.len() != self.tensors.len() {
            return Err(Error::DirectoryMismatch(format!(
                "expected {} tensors, got {}",
                want.tensors.len(),
                self.tensors.len()
            )));
        }
        for (a, b) in want.tensors.iter().zip(self.tensors.iter()) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::DirectoryMismatch(format!(
                    "expected tensor {} {:?}, got {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }
}

/// Trainable parameters of a [`DenoiserSpec`]; classical denoisers have none.
pub fn param_count(spec: &DenoiserSpec) -> usize {
    match spec {
        DenoiserSpec::Conv(arch) => arch
            .layers()
            .iter()
            .map(|(cin, cout, _)| cout * (cin * 9 + 1))
            .sum(),
        _ => 0,
    }
}

/// Kaiming fan-in initialization: weights `~ N(0, 2 / (in * 9))`, biases
/// zero, drawn from a ChaCha8 stream in tensor order.
pub fn init_weights(arch: ConvArch, seed: u64) -> Result<DenoiserWeights> {
    let mut w = DenoiserWeights::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in w.tensors.iter_mut() {
        if !t.name.ends_with(".weight") {
            continue;
        }
        let fan_in = t.shape[1] * t.shape[2] * t.shape[3];
        let std = (2.0 / fan_in as f64).sqrt();
        for v in t.data.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v = std * n;
        }
    }
    Ok(w)
}

/// Symmetric reflection of an out-of-range index (`-1 -> 0`, `n -> n-1`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 { -i - 1 } else if i >= n { 2 * n - 1 - i } else { i };
    r as usize
}

/// One 3x3 convolution layer over planar buffers, with symmetric-reflect
/// padding and optional ReLU. `input` holds `cin` planes of `h * w`;
/// `weight` is `[cout, cin, 3, 3]` row-major; output has `cout` planes.
pub fn conv_layer(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    weight: &[f64],
    bias: &[f64],
    relu: bool,
) -> Vec<f64> {
    debug_assert_eq!(input.len(), cin * h * w);
    debug_assert_eq!(weight.len(), cout * cin * 9);
    debug_assert_eq!(bias.len(), cout);
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        let oplane = &mut out[o * h * w..(o + 1) * h * w];
        oplane.fill(bias[o]);
        for ic in 0..cin {
            let iplane = &input[ic * h * w..(ic + 1) * h * w];
            let k = &weight[(o * cin + ic) * 9..(o * cin + ic + 1) * 9];
            for i in 0..h {
                let i0 = reflect(i as isize - 1, h) * w;
                let i1 = i * w;
                let i2 = reflect(i as isize + 1, h) * w;
                for j in 0..w {
                    let j0 = reflect(j as isize - 1, w);
                    let j2 = reflect(j as isize + 1, w);
                    oplane[i1 + j] += k[0] * iplane[i0 + j0]
                        + k[1] * iplane[i0 + j]
                        + k[2] * iplane[i0 + j2]
                        + k[3] * iplane[i1 + j0]
                        + k[4] * iplane[i1 + j]
                        + k[5] * iplane[i1 + j2]
                        + k[6] * iplane[i2 + j0]
                        + k[7] * iplane[i2 + j]
                        + k[8] * iplane[i2 + j2];
                }
            }
        }
        if relu {
            for v in oplane.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
    out
}

/// Runs the full conv stack on an already-augmented input of
/// `channels + 1` planes (image planes then noise plane), in the
/// normalized domain. Returns `channels` planes.
pub fn conv_forward(weights: &DenoiserWeights, input: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    weights.validate()?;
    let mut cur = input.to_vec();
    for (idx, (cin, cout, relu)) in weights.arch.layers().into_iter().enumerate() {
        let wt = &weights.tensors[2 * idx];
        let bt = &weights.tensors[2 * idx + 1];
        cur = conv_layer(&cur, h, w, cin, cout, &wt.data, &bt.data, relu);
    }
    Ok(cur)
}

/// Applies the selected denoiser at noise level `sigma` (DN units).
///
/// `weights` is required for (and only consulted by) the conv denoiser.
pub fn denoise(
    x: &Image,
    sigma: f64,
    spec: &DenoiserSpec,
    weights: Option<&DenoiserWeights>,
) -> Result<Image> {
    match spec {
        DenoiserSpec::Identity => Ok(x.clone()),
        DenoiserSpec::Median { window } => median_denoise(x, *window),
        DenoiserSpec::DctThreshold { tau0, mode } => Ok(dct_threshold(x, tau0 * sigma, *mode)),
        DenoiserSpec::Conv(arch) => {
            let w = weights.ok_or(Error::MissingWeights)?;
            if w.arch != *arch {
                return Err(Error::DirectoryMismatch(format!(
                    "weights built for {:?}, requested {:?}",
                    w.arch, arch
                )));
            }
            conv_denoise(x, sigma, w)
        }
    }
}

fn median_denoise(x: &Image, window: usize) -> Result<Image> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::InvalidWindow(window));
    }
    let (h, w, c) = x.dims();
    let half = (window / 2) as isize;
    let mut out = x.clone();
    let mut buf = Vec::with_capacity(window * window);
    for ch in 0..c {
        let src = x.plane(ch).to_vec();
        let dst = out.plane_mut(ch);
        for i in 0..h {
            for j in 0..w {
                buf.clear();
                for di in -half..=half {
                    let ri = reflect(i as isize + di, h);
                    for dj in -half..=half {
                        let rj = reflect(j as isize + dj, w);
                        buf.push(src[ri * w + rj]);
                    }
                }
                buf.sort_by(|a, b| a.total_cmp(b));
                dst[i * w + j] = buf[buf.len() / 2];
            }
        }
    }
    Ok(out)
}

fn dct_threshold(x: &Image, tau: f64, mode: ThresholdMode) -> Image {
    let (h, w, c) = x.dims();
    let mut out = x.clone();
    for ch in 0..c {
        let plane = out.plane_mut(ch);
        dct2_plane(plane, h, w);
        for (idx, v) in plane.iter_mut().enumerate() {
            if idx == 0 {
                continue; // DC carries the scene's absolute level
            }
            *v = match mode {
                ThresholdMode::Hard => {
                    if v.abs() < tau {
                        0.0
                    } else {
                        *v
                    }
                }
                ThresholdMode::Soft => v.signum() * (v.abs() - tau).max(0.0),
            };
        }
        idct2_plane(plane, h, w);
    }
    out
}

fn conv_denoise(x: &Image, sigma: f64, weights: &DenoiserWeights) -> Result<Image> {
    let (h, w, c) = x.dims();
    let arch = weights.arch;
    if c != arch.channels {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", arch.channels),
            got: format!("{c}"),
        });
    }
    let s = arch.sigma_scale;
    let mut input = vec![0.0; (c + 1) * h * w];
    for (dst, src) in input.iter_mut().zip(x.data().iter()) {
        *dst = src / s;
    }
    input[c * h * w..].fill(sigma / s);
    let net = conv_forward(weights, &input, h, w)?;
    let mut out = x.clone();
    for (o, n) in out.data_mut().iter_mut().zip(net.iter()) {
        *o += s * n;
    }
    Ok(out)
}
