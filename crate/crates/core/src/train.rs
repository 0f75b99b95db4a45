//! Training: Adam over tape gradients, with three procedures layered on
//! top of the same machinery.
//!
//! Phase 1 pretrains the conv denoiser alone on clean/noisy patch pairs
//! (L1). Phase 2 trains the full unrolled network end to end against the
//! ground-truth scene with fresh sensor noise every step (L2). The third
//! procedure adapts trained weights to unlabeled wrapped images by
//! enforcing scaling equivariance: rescaling a reconstruction, re-wrapping
//! it, and reconstructing again should land on the rescaled estimate.
//!
//! Every procedure draws all of its randomness (patch positions, noise,
//! scale factors, flips) from one stream seeded by the config, records each
//! step's batch on a single tape, and accumulates gradients in recording
//! order, so a rerun with the same seed reproduces losses and weights bit
//! for bit.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{record_conv_denoiser, Id, ParamStore, Tape};
use crate::denoise::{init_weights, ConvArch, DenoiserWeights};
use crate::error::{Error, Result};
use crate::image::{BitDepth, Image};
use crate::modulo::wrap;
use crate::solver::{record_unrolled, UnrolledWeights};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TrainPhase {
    Pretrain,
    EndToEnd,
    SelfEquivariance,
}

impl TrainPhase {
    pub fn name(self) -> &'static str {
        match self {
            TrainPhase::Pretrain => "pretrain",
            TrainPhase::EndToEnd => "end-to-end",
            TrainPhase::SelfEquivariance => "self-equivariance",
        }
    }
}

/// One optimizer step's averaged training loss.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub phase: TrainPhase,
    pub loss: f64,
}

/// Writes `step,phase,loss` rows for offline plotting.
pub fn write_loss_csv<W: Write>(out: &mut W, records: &[LossRecord]) -> Result<()> {
    writeln!(out, "step,phase,loss")?;
    for r in records {
        writeln!(out, "{},{},{}", r.step, r.phase.name(), r.loss)?;
    }
    Ok(())
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Noise standard deviations are drawn uniformly from this closed-open
    /// range (degenerate ranges pin the value).
    pub sigma_range: (f64, f64),
    /// Scale factors for equivariance fine-tuning, same sampling rule.
    pub alpha_range: (f64, f64),
    /// Square crop side; images smaller than this are used whole.
    pub patch: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl TrainConfig {
    /// Denoiser pretraining defaults: L1, noise up to 80 DN.
    pub fn pretrain(seed: u64) -> TrainConfig {
        TrainConfig {
            steps: 200,
            batch: 4,
            lr: 1e-3,
            sigma_range: (0.0, 80.0),
            alpha_range: (0.75, 1.25),
            patch: 32,
            seed,
            loss: LossKind::L1,
        }
    }

    /// End-to-end defaults: L2 at a reduced learning rate.
    pub fn end_to_end(seed: u64) -> TrainConfig {
        TrainConfig { lr: 5e-5, loss: LossKind::L2, batch: 2, ..TrainConfig::pretrain(seed) }
    }

    /// Equivariance fine-tuning defaults: small steps, label-free.
    pub fn self_equivariance(seed: u64) -> TrainConfig {
        TrainConfig { lr: 1e-5, loss: LossKind::L2, batch: 1, steps: 100, ..TrainConfig::pretrain(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument("steps and batch must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        let (slo, shi) = self.sigma_range;
        if !(0.0 <= slo && slo <= shi) {
            return Err(Error::InvalidArgument(format!("bad sigma range [{slo}, {shi}]")));
        }
        let (alo, ahi) = self.alpha_range;
        if !(0.0 < alo && alo <= ahi) {
            return Err(Error::InvalidArgument(format!("bad alpha range [{alo}, {ahi}]")));
        }
        if self.patch < 4 {
            return Err(Error::InvalidArgument(format!("patch side must be at least 4, got {}", self.patch)));
        }
        Ok(())
    }
}

/// Adam moments; one slot per parameter tensor element.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, lr: f64) -> OptimizerState {
        OptimizerState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: store.zero_grads(),
            v: store.zero_grads(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }
}

/// Standard Adam update with bias correction, in place.
pub fn adam_step(opt: &mut OptimizerState, params: &mut ParamStore, grads: &[Vec<f64>]) {
    opt.t += 1;
    let bc1 = 1.0 - opt.beta1.powi(opt.t as i32);
    let bc2 = 1.0 - opt.beta2.powi(opt.t as i32);
    for (i, tensor) in params.tensors.iter_mut().enumerate() {
        for (e, p) in tensor.data.iter_mut().enumerate() {
            let g = grads[i][e];
            opt.m[i][e] = opt.beta1 * opt.m[i][e] + (1.0 - opt.beta1) * g;
            opt.v[i][e] = opt.beta2 * opt.v[i][e] + (1.0 - opt.beta2) * g * g;
            let m_hat = opt.m[i][e] / bc1;
            let v_hat = opt.v[i][e] / bc2;
            *p -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Data-stream seed, decorrelated from the weight-init stream.
fn data_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

fn crop(img: &Image, patch: usize, rng: &mut ChaCha8Rng) -> Image {
    let (h, w, c) = img.dims();
    if h <= patch && w <= patch {
        return img.clone();
    }
    let ph = patch.min(h);
    let pw = patch.min(w);
    let i0 = if h > ph { rng.gen_range(0..=h - ph) } else { 0 };
    let j0 = if w > pw { rng.gen_range(0..=w - pw) } else { 0 };
    Image::from_fn(ph, pw, c, |i, j, ch| img.at(i0 + i, j0 + j, ch)).expect("crop dims valid")
}

fn add_noise(img: &Image, sigma: f64, rng: &mut ChaCha8Rng) -> Image {
    let mut out = img.clone();
    for v in out.data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += sigma * n;
    }
    out
}

fn flipped(img: &Image, flip_h: bool, flip_v: bool) -> Image {
    if !flip_h && !flip_v {
        return img.clone();
    }
    let (h, w, c) = img.dims();
    Image::from_fn(h, w, c, |i, j, ch| {
        let si = if flip_v { h - 1 - i } else { i };
        let sj = if flip_h { w - 1 - j } else { j };
        img.at(si, sj, ch)
    })
    .expect("flip preserves dims")
}

fn check_dataset(dataset: &[Image], channels: usize) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for img in dataset {
        if img.channels() != channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{channels}-channel training images"),
                got: format!("{}-channel image", img.channels()),
            });
        }
    }
    Ok(())
}

/// Averages per-element scalar losses on the tape.
fn batch_mean(tape: &mut Tape, losses: &[Id]) -> Id {
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l);
    }
    tape.scale(total, 1.0 / losses.len() as f64)
}

/// Phase 1: trains the conv denoiser on clean patches plus sampled AWGN.
pub fn pretrain_denoiser(
    dataset: &[Image],
    arch: ConvArch,
    cfg: &TrainConfig,
) -> Result<(DenoiserWeights, Vec<LossRecord>)> {
    cfg.validate()?;
    check_dataset(dataset, arch.channels)?;
    if cfg.loss != LossKind::L1 {
        return Err(Error::InvalidArgument("denoiser pretraining uses the L1 loss".into()));
    }
    let weights = init_weights(arch, cfg.seed)?;
    let mut store = ParamStore::new(weights.tensors);
    let mut opt = OptimizerState::new(&store, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed(cfg.seed));
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let mut losses = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let idx = rng.gen_range(0..dataset.len());
            let clean = crop(&dataset[idx], cfg.patch, &mut rng);
            let sigma = sample_range(&mut rng, cfg.sigma_range);
            let noisy = add_noise(&clean, sigma, &mut rng);
            let noisy_id = tape.constant_image(&noisy);
            let sigma_id = tape.scalar(sigma);
            let out = record_conv_denoiser(&mut tape, &store, &arch, noisy_id, sigma_id, 0);
            let clean_id = tape.constant_image(&clean);
            losses.push(tape.mean_abs(out, clean_id));
        }
        let avg = batch_mean(&mut tape, &losses);
        let grads = tape.backward(avg, &store);
        history.push(LossRecord { step, phase: TrainPhase::Pretrain, loss: tape.val(avg).value() });
        adam_step(&mut opt, &mut store, &grads.take_params());
    }
    Ok((DenoiserWeights { arch, tensors: store.tensors }, history))
}

/// Phase 2: trains the unrolled network end to end. Each batch element is
/// a fresh crop, noise level, and noise sample pushed through the sensor
/// model; the loss compares the reconstruction to the clean scene.
pub fn train_unrolled(
    dataset: &[Image],
    mut w: UnrolledWeights,
    b: BitDepth,
    cfg: &TrainConfig,
) -> Result<(UnrolledWeights, Vec<LossRecord>)> {
    cfg.validate()?;
    w.validate()?;
    check_dataset(dataset, w.arch.channels)?;
    if cfg.loss != LossKind::L2 {
        return Err(Error::InvalidArgument("end-to-end training uses the L2 loss".into()));
    }
    let mut opt = OptimizerState::new(&w.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed(cfg.seed));
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let mut losses = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let idx = rng.gen_range(0..dataset.len());
            let clean = crop(&dataset[idx], cfg.patch, &mut rng);
            let sigma = sample_range(&mut rng, cfg.sigma_range);
            let y = wrap(&add_noise(&clean, sigma, &mut rng), b);
            let y_id = tape.constant_image(&y);
            let out = record_unrolled(&mut tape, &w.params, &w.arch, w.t_layers, y_id, b)?;
            let clean_id = tape.constant_image(&clean);
            losses.push(tape.mean_sq(out, clean_id));
        }
        let avg = batch_mean(&mut tape, &losses);
        let grads = tape.backward(avg, &w.params);
        history.push(LossRecord { step, phase: TrainPhase::EndToEnd, loss: tape.val(avg).value() });
        adam_step(&mut opt, &mut w.params, &grads.take_params());
    }
    Ok((w, history))
}

/// Node handles of a recorded scaling-equivariance graph.
pub struct SeGraph {
    pub loss: Id,
    /// Rescaled first-pass reconstruction (the re-wrap input).
    pub x2: Id,
    /// Re-wrapped virtual measurement fed to the second pass.
    pub y2: Id,
}

/// Records the scaling-equivariance loss: reconstruct, rescale by `alpha`,
/// wrap again, reconstruct again, and penalize the mismatch. Gradients
/// flow through both reconstructions; the wrap between them passes
/// gradients straight through.
pub fn record_se_loss(
    tape: &mut Tape,
    store: &ParamStore,
    arch: &ConvArch,
    t_layers: usize,
    y_id: Id,
    b: BitDepth,
    alpha: f64,
) -> Result<SeGraph> {
    let x_hat = record_unrolled(tape, store, arch, t_layers, y_id, b)?;
    let x2 = tape.scale(x_hat, alpha);
    let y2 = tape.wrap_st(x2, b);
    let x3 = record_unrolled(tape, store, arch, t_layers, y2, b)?;
    let loss = tape.mean_sq(x2, x3);
    Ok(SeGraph { loss, x2, y2 })
}

/// Scaling-equivariance loss and its parameter gradients for one wrapped
/// measurement at one scale factor.
pub fn se_loss(y: &Image, w: &UnrolledWeights, b: BitDepth, alpha: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    w.validate()?;
    let mut tape = Tape::new();
    let y_id = tape.constant_image(y);
    let graph = record_se_loss(&mut tape, &w.params, &w.arch, w.t_layers, y_id, b, alpha)?;
    let grads = tape.backward(graph.loss, &w.params);
    Ok((tape.val(graph.loss).value(), grads.take_params()))
}

/// Adapts trained weights to unlabeled wrapped images by minimizing the
/// expected scaling-equivariance loss over sampled scale factors and
/// horizontal/vertical flips.
pub fn finetune_se(
    wrapped_set: &[Image],
    mut w: UnrolledWeights,
    b: BitDepth,
    cfg: &TrainConfig,
) -> Result<(UnrolledWeights, Vec<LossRecord>)> {
    cfg.validate()?;
    w.validate()?;
    check_dataset(wrapped_set, w.arch.channels)?;
    let mut opt = OptimizerState::new(&w.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed(cfg.seed));
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let mut losses = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let idx = rng.gen_range(0..wrapped_set.len());
            let y = crop(&wrapped_set[idx], cfg.patch, &mut rng);
            let flip_h = rng.gen_bool(0.5);
            let flip_v = rng.gen_bool(0.5);
            let y = flipped(&y, flip_h, flip_v);
            let alpha = sample_range(&mut rng, cfg.alpha_range);
            let y_id = tape.constant_image(&y);
            let graph = record_se_loss(&mut tape, &w.params, &w.arch, w.t_layers, y_id, b, alpha)?;
            losses.push(graph.loss);
        }
        let avg = batch_mean(&mut tape, &losses);
        let grads = tape.backward(avg, &w.params);
        history.push(LossRecord { step, phase: TrainPhase::SelfEquivariance, loss: tape.val(avg).value() });
        adam_step(&mut opt, &mut w.params, &grads.take_params());
    }
    Ok((w, history))
}
