//! Reconstruction solvers: the direct least-squares baseline, the
//! plug-and-play ADMM loop, and the unrolled network forward pass.
//!
//! All three minimize the same gradient-domain data term: the recovered
//! image's spatial differences should match the re-wrapped differences of
//! the measurement. The baseline solves it alone in closed form; ADMM
//! alternates the closed-form solve with a denoising step; the unrolled
//! network is the same recursion truncated to a few layers with learned
//! per-layer step sizes and noise levels and a learned conv denoiser.

use crate::autodiff::{record_conv_denoiser, softplus, softplus_inv, Id, ParamStore, Tape};
use crate::denoise::{denoise, init_weights, ConvArch, DenoiserSpec, DenoiserWeights, Tensor};
use crate::error::{Error, Result};
use crate::grad::wrapped_gradient;
use crate::image::{BitDepth, Image};
use crate::spectral::x_update;

/// How to fix the mean of a reconstruction whose data term only constrains
/// differences.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum DcPolicy {
    /// Use the mean of the wrapped measurement.
    MeasurementMean,
    Zero,
    Provided(f64),
}

impl DcPolicy {
    fn resolve(&self, y: &Image) -> f64 {
        match *self {
            DcPolicy::MeasurementMean => y.mean(),
            DcPolicy::Zero => 0.0,
            DcPolicy::Provided(v) => v,
        }
    }
}

/// Fixed-point configuration for [`admm_reconstruct`].
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub iterations: usize,
    pub rho: f64,
    pub lambda: f64,
    pub denoiser: DenoiserSpec,
    pub dc: DcPolicy,
}

impl SolverConfig {
    pub fn new(iterations: usize, rho: f64, lambda: f64, denoiser: DenoiserSpec) -> SolverConfig {
        SolverConfig { iterations, rho, lambda, denoiser, dc: DcPolicy::MeasurementMean }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("solver needs at least one iteration".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidRho(self.rho));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Denoiser input noise level implied by the penalty weights.
    pub fn sigma(&self) -> f64 {
        (self.lambda / self.rho).sqrt()
    }
}

/// Borrowed view of the ADMM iterates after iteration `k` (1-based).
pub struct AdmmState<'a> {
    pub x: &'a Image,
    pub z: &'a Image,
    pub u: &'a Image,
    pub k: usize,
}

impl AdmmState<'_> {
    /// Root-mean-square consensus residual `x - z`.
    pub fn residual(&self) -> f64 {
        let n = self.x.data().len() as f64;
        let ss: f64 = self
            .x
            .data()
            .iter()
            .zip(self.z.data().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (ss / n).sqrt()
    }
}

fn zip(a: &Image, b: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
    debug_assert!(a.same_shape(b).is_ok());
    let mut out = a.clone();
    for (o, s) in out.data_mut().iter_mut().zip(b.data().iter()) {
        *o = f(*o, *s);
    }
    out
}

/// Direct reconstruction: integrate the re-wrapped measurement gradient.
///
/// Exact (up to the mean, fixed by `dc`) whenever the scene's true
/// differences stay inside `[-2^(b-1), 2^(b-1))` and the measurement is
/// noiseless; noise and larger steps corrupt the integrated field globally.
pub fn itoh_baseline(y: &Image, b: BitDepth, dc: DcPolicy) -> Result<Image> {
    let v = wrapped_gradient(y, b);
    crate::spectral::poisson_integrate(&v, dc.resolve(y))
}

/// Plug-and-play ADMM reconstruction, returning the denoised iterate.
pub fn admm_reconstruct(
    y: &Image,
    b: BitDepth,
    cfg: &SolverConfig,
    weights: Option<&DenoiserWeights>,
) -> Result<Image> {
    admm_reconstruct_with(y, b, cfg, weights, |_| {})
}

/// ADMM loop with a per-iteration observer for residual tracking.
///
/// Starts from `z = y`, `u = 0`; each iteration solves the gradient data
/// term against the prior `z - u`, denoises `x + u` at noise level
/// `sqrt(lambda / rho)`, and takes a dual step. The DC component rides in
/// from the warm start: the data solve pins the mean of `x` to the mean of
/// its prior, so no explicit DC policy is consulted here.
pub fn admm_reconstruct_with(
    y: &Image,
    b: BitDepth,
    cfg: &SolverConfig,
    weights: Option<&DenoiserWeights>,
    mut on_iter: impl FnMut(&AdmmState),
) -> Result<Image> {
    cfg.validate()?;
    let v = wrapped_gradient(y, b);
    let sigma = cfg.sigma();
    let mut z = y.clone();
    let mut u = Image::new(y.height(), y.width(), y.channels())?;
    for k in 1..=cfg.iterations {
        let x_tilde = zip(&z, &u, |zv, uv| zv - uv);
        let x = x_update(&v, &x_tilde, cfg.rho)?;
        let z_tilde = zip(&x, &u, |xv, uv| xv + uv);
        z = denoise(&z_tilde, sigma, &cfg.denoiser, weights)?;
        u = zip(&zip(&u, &x, |uv, xv| uv + xv), &z, |s, zv| s - zv);
        on_iter(&AdmmState { x: &x, z: &z, u: &u, k });
    }
    Ok(z)
}

/// Channel-count guard around [`admm_reconstruct`] for color inputs.
///
/// The underlying machinery is already channel-aware: the spectral solve
/// and the classical denoisers act plane by plane, while the conv denoiser
/// consumes all channels jointly (plus the noise plane).
pub fn reconstruct_rgb(
    y: &Image,
    b: BitDepth,
    cfg: &SolverConfig,
    weights: Option<&DenoiserWeights>,
) -> Result<Image> {
    if y.channels() != 3 {
        return Err(Error::UnsupportedChannels(y.channels()));
    }
    admm_reconstruct(y, b, cfg, weights)
}

/// Learned parameters of the unrolled reconstruction network.
///
/// `params` holds the shared denoiser's conv tensors in layer order,
/// followed by `"rho_raw"` and `"sigma_raw"` vectors of length `t_layers`.
/// The per-layer step size and noise level are kept unconstrained and
/// mapped through softplus on read, so optimizer steps can never produce a
/// non-positive `rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnrolledWeights {
    pub arch: ConvArch,
    pub t_layers: usize,
    pub params: ParamStore,
}

pub const DEFAULT_T_LAYERS: usize = 3;

impl UnrolledWeights {
    /// Randomly initialized denoiser with every layer starting at the same
    /// step size `rho0` and noise level `sigma0`.
    pub fn new(arch: ConvArch, t_layers: usize, rho0: f64, sigma0: f64, seed: u64) -> Result<UnrolledWeights> {
        let dn = init_weights(arch, seed)?;
        UnrolledWeights::from_denoiser(dn, t_layers, rho0, sigma0)
    }

    /// Zero conv weights: the denoiser is the exact identity, so the
    /// network reduces to plain ADMM. Useful as a reference point.
    pub fn with_zero_denoiser(arch: ConvArch, t_layers: usize, rho0: f64, sigma0: f64) -> Result<UnrolledWeights> {
        let dn = DenoiserWeights::zeros(arch)?;
        UnrolledWeights::from_denoiser(dn, t_layers, rho0, sigma0)
    }

    /// Wraps a (typically pretrained) denoiser with fresh per-layer scalars.
    pub fn from_denoiser(dn: DenoiserWeights, t_layers: usize, rho0: f64, sigma0: f64) -> Result<UnrolledWeights> {
        if t_layers == 0 {
            return Err(Error::InvalidArgument("unrolled network needs at least one layer".into()));
        }
        if !(rho0 > 0.0 && rho0.is_finite()) {
            return Err(Error::InvalidRho(rho0));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "initial sigma must be positive and finite, got {sigma0}"
            )));
        }
        let mut tensors = dn.tensors;
        tensors.push(Tensor {
            name: "rho_raw".into(),
            shape: vec![t_layers],
            data: vec![softplus_inv(rho0); t_layers],
        });
        tensors.push(Tensor {
            name: "sigma_raw".into(),
            shape: vec![t_layers],
            data: vec![softplus_inv(sigma0); t_layers],
        });
        Ok(UnrolledWeights { arch: dn.arch, t_layers, params: ParamStore::new(tensors) })
    }

    /// Rebuilds from a raw tensor list, checking the layout.
    pub fn from_tensors(arch: ConvArch, t_layers: usize, tensors: Vec<Tensor>) -> Result<UnrolledWeights> {
        let w = UnrolledWeights { arch, t_layers, params: ParamStore::new(tensors) };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.t_layers == 0 {
            return Err(Error::InvalidArgument("unrolled network needs at least one layer".into()));
        }
        let template = DenoiserWeights::zeros(self.arch)?;
        let n_conv = template.tensors.len();
        if self.params.tensors.len() != n_conv + 2 {
            return Err(Error::DirectoryMismatch(format!(
                "expected {} tensors, found {}",
                n_conv + 2,
                self.params.tensors.len()
            )));
        }
        for (have, want) in self.params.tensors.iter().zip(template.tensors.iter()) {
            if have.name != want.name || have.shape != want.shape {
                return Err(Error::DirectoryMismatch(format!(
                    "tensor {} has shape {:?}, expected {} {:?}",
                    have.name, have.shape, want.name, want.shape
                )));
            }
        }
        for (idx, name) in [(n_conv, "rho_raw"), (n_conv + 1, "sigma_raw")] {
            let t = &self.params.tensors[idx];
            if t.name != name || t.shape != [self.t_layers] {
                return Err(Error::DirectoryMismatch(format!(
                    "tensor {} has shape {:?}, expected {name} [{}]",
                    t.name, t.shape, self.t_layers
                )));
            }
        }
        Ok(())
    }

    fn scalar_tensor(&self, name: &str) -> &Tensor {
        let idx = self.params.index_of(name).expect("validated layout");
        &self.params.tensors[idx]
    }

    pub fn rho(&self, layer: usize) -> f64 {
        softplus(self.scalar_tensor("rho_raw").data[layer])
    }

    pub fn sigma(&self, layer: usize) -> f64 {
        softplus(self.scalar_tensor("sigma_raw").data[layer])
    }

    /// Clones the conv tensors back out as plain denoiser weights.
    pub fn denoiser(&self) -> DenoiserWeights {
        let n_conv = self.arch.layers().len() * 2;
        DenoiserWeights { arch: self.arch, tensors: self.params.tensors[..n_conv].to_vec() }
    }

    pub fn param_count(&self) -> usize {
        self.params.total_len()
    }
}

/// Records the full unrolled network on `tape` starting from the node
/// `y_id` (which may itself depend on parameters, as in self-supervised
/// fine-tuning) and returns the output node.
///
/// The recursion per layer k:
///   x = solve(div(centered_mod(diff y)), z - u, rho_k)
///   z = denoise(x + u, sigma_k)
///   u = u + x - z
pub fn record_unrolled(
    tape: &mut Tape,
    store: &ParamStore,
    arch: &ConvArch,
    t_layers: usize,
    y_id: Id,
    b: BitDepth,
) -> Result<Id> {
    let y_img = tape.val(y_id).to_image()?;
    if y_img.channels() != arch.channels {
        return Err(Error::ShapeMismatch {
            expected: format!("{}-channel input", arch.channels),
            got: format!("{}-channel image", y_img.channels()),
        });
    }
    let rho_idx = store
        .index_of("rho_raw")
        .ok_or_else(|| Error::DirectoryMismatch("missing rho_raw tensor".into()))?;
    let sigma_idx = store
        .index_of("sigma_raw")
        .ok_or_else(|| Error::DirectoryMismatch("missing sigma_raw tensor".into()))?;

    let diff = tape.forward_diff(y_id);
    let rewrapped = tape.centered_mod_st(diff, b);
    let data = tape.divergence(rewrapped);

    let zero = Image::new(y_img.height(), y_img.width(), y_img.channels())?;
    let mut z = y_id;
    let mut u = tape.constant_image(&zero);
    for k in 0..t_layers {
        let rho_raw = tape.param_elem(store, rho_idx, k);
        let rho = tape.softplus(rho_raw);
        let sigma_raw = tape.param_elem(store, sigma_idx, k);
        let sigma = tape.softplus(sigma_raw);
        let x_tilde = tape.sub(z, u);
        let x = tape.spectral_solve(data, x_tilde, rho);
        let z_tilde = tape.add(x, u);
        z = record_conv_denoiser(tape, store, arch, z_tilde, sigma, 0);
        let step = tape.sub(x, z);
        u = tape.add(u, step);
    }
    Ok(z)
}

/// Runs the unrolled network on a measurement.
pub fn unrolled_forward(y: &Image, b: BitDepth, w: &UnrolledWeights) -> Result<Image> {
    w.validate()?;
    let mut tape = Tape::new();
    let y_id = tape.constant_image(y);
    let out = record_unrolled(&mut tape, &w.params, &w.arch, w.t_layers, y_id, b)?;
    tape.val(out).to_image()
}
