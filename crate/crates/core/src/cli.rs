//! Command-line interface: subcommand definitions and dispatch.
//!
//! [`cli_dispatch`] is the whole surface: parse, run, and map the outcome
//! to an exit code. Usage problems exit 2 with clap's diagnostics; runtime
//! failures exit 1 with a single machine-parsable line on stderr,
//! `error: <code>: <message>`. Data goes to files or stdout, never to the
//! diagnostic stream.
//!
//! Every subcommand that draws random numbers takes an explicit `--seed`,
//! so identical invocations produce byte-identical outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::denoise::{ConvArch, DenoiserSpec, DenoiserWeights};
use crate::error::{Error, Result};
use crate::image::{BitDepth, Image};
use crate::io::{
    load_weights, read_image, save_weights, write_atomic, write_pfm, write_png, DatasetManifest,
    Provenance, Role, WeightPayload,
};
use crate::metrics::{evaluate, AlignMode, MetricReport};
use crate::modulo::{sense, wrap, wrap_scalar, NoiseModel};
use crate::scene::{synth_scene, SceneKind};
use crate::solver::{
    admm_reconstruct, itoh_baseline, unrolled_forward, DcPolicy, SolverConfig, UnrolledWeights,
    DEFAULT_T_LAYERS,
};
use crate::tonemap::reinhard_tonemap;
use crate::train::{
    finetune_se, pretrain_denoiser, train_unrolled, write_loss_csv, LossRecord, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "modhdr",
    version,
    about = "HDR reconstruction from modulo (self-reset) sensor measurements"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a modulo sensor: wrap a scene, optionally with read noise.
    Wrap(WrapCmd),
    /// Reconstruct an HDR scene from a wrapped measurement.
    Reconstruct(ReconstructCmd),
    /// Generate a synthetic test scene.
    Synth(SynthCmd),
    /// Pretrain the convolutional denoiser on clean/noisy patch pairs.
    TrainDenoiser(TrainDenoiserCmd),
    /// Train the unrolled reconstruction network end to end.
    TrainUnrolled(TrainUnrolledCmd),
    /// Fine-tune unrolled weights on unlabeled wrapped images.
    FinetuneSe(FinetuneSeCmd),
    /// Compare a reconstruction against a reference scene.
    Eval(EvalCmd),
    /// Tone-map an HDR image for display.
    Tonemap(TonemapCmd),
}

/// Parses `args` (including argv[0]) and runs the selected subcommand.
///
/// Returns the process exit code: 0 on success, 1 on runtime failure,
/// 2 on usage errors.
pub fn cli_dispatch(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.cmd) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {}: {}", err.code(), err);
            1
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Wrap(c) => run_wrap(c),
        Cmd::Reconstruct(c) => run_reconstruct(c),
        Cmd::Synth(c) => run_synth(c),
        Cmd::TrainDenoiser(c) => run_train_denoiser(c),
        Cmd::TrainUnrolled(c) => run_train_unrolled(c),
        Cmd::FinetuneSe(c) => run_finetune_se(c),
        Cmd::Eval(c) => run_eval(c),
        Cmd::Tonemap(c) => run_tonemap(c),
    }
}

/// Writes a float image by extension: `.pfm` exact, `.png` rounded 16-bit.
fn write_float_image(path: &Path, img: &Image) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|s| s.to_str())
        .map(|s| s.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pfm" => write_pfm(path, img),
        "png" => write_png(path, img, 16),
        _ => Err(Error::InvalidArgument(format!(
            "unsupported output extension in {} (expected .pfm or .png)",
            path.display()
        ))),
    }
}

fn write_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_loss_csv(&mut buf, records)?;
    write_atomic(path, &buf)
}

#[derive(Args)]
struct WrapCmd {
    /// Input scene (PFM or PNG).
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Modulo bit depth of the simulated sensor.
    #[arg(long, default_value_t = 8)]
    bits: u32,
    /// Gaussian read-noise level in DN before wrapping (0 = noiseless).
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Seed for the noise field.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output measurement. PNG output is quantized to integer DN
    /// (modularly, so a rounded 2^b becomes 0); PFM keeps raw floats.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn run_wrap(c: WrapCmd) -> Result<()> {
    let x = read_image(&c.input)?;
    let b = BitDepth::new(c.bits)?;
    let y = if c.sigma > 0.0 {
        sense(&x, b, &NoiseModel::new(c.sigma, c.seed))?
    } else {
        wrap(&x, b)
    };
    let ext = c.out.extension().and_then(|s| s.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("pfm") {
        write_pfm(&c.out, &y)
    } else {
        let yq = y.map(|v| wrap_scalar(v.round(), b));
        let container = if c.bits <= 8 { 8 } else { 16 };
        write_png(&c.out, &yq, container)
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Itoh,
    Admm,
    Unrolled,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum DenoiserArg {
    Identity,
    Median,
    DctThreshold,
    Conv,
}

#[derive(Args)]
struct ReconstructCmd {
    /// Wrapped measurement (PNG or PFM).
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Modulo bit depth the measurement was captured at.
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Denoiser for --method admm; `conv` needs --weights.
    #[arg(long, value_enum, default_value_t = DenoiserArg::DctThreshold)]
    denoiser: DenoiserArg,
    /// Weight file: denoiser weights (admm + conv) or unrolled weights.
    #[arg(long, value_name = "PATH")]
    weights: Option<PathBuf>,
    /// ADMM iteration count.
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// ADMM penalty strength.
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Prior weight; the plug-in denoiser runs at sigma = sqrt(lambda/rho).
    #[arg(long, default_value_t = 200.0)]
    lambda: f64,
    /// Clamp the output to the valid DN range of --target-bits.
    #[arg(long)]
    clamp: bool,
    /// Nominal scene depth used by --clamp.
    #[arg(long, default_value_t = 10)]
    target_bits: u32,
    /// Output reconstruction (PFM recommended; PNG rounds to 16-bit).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn load_denoiser_weights(path: &Path) -> Result<DenoiserWeights> {
    match load_weights(path)?.0 {
        WeightPayload::Denoiser(w) => Ok(w),
        WeightPayload::Unrolled(_) => Err(Error::InvalidArgument(
            "weight file holds unrolled weights; this mode needs denoiser weights".into(),
        )),
    }
}

fn load_unrolled_weights(path: &Path) -> Result<UnrolledWeights> {
    match load_weights(path)?.0 {
        WeightPayload::Unrolled(w) => Ok(w),
        WeightPayload::Denoiser(_) => Err(Error::InvalidArgument(
            "weight file holds denoiser weights; this mode needs unrolled weights".into(),
        )),
    }
}

fn run_reconstruct(c: ReconstructCmd) -> Result<()> {
    let y = read_image(&c.input)?;
    let b = BitDepth::new(c.bits)?;
    let mut x = match c.method {
        MethodArg::Itoh => itoh_baseline(&y, b, DcPolicy::MeasurementMean)?,
        MethodArg::Admm => {
            let (spec, weights) = match c.denoiser {
                DenoiserArg::Identity => (DenoiserSpec::Identity, None),
                DenoiserArg::Median => (DenoiserSpec::default_median(), None),
                DenoiserArg::DctThreshold => (DenoiserSpec::default_dct_threshold(), None),
                DenoiserArg::Conv => {
                    let path = c.weights.as_ref().ok_or(Error::MissingWeights)?;
                    let w = load_denoiser_weights(path)?;
                    (DenoiserSpec::Conv(w.arch), Some(w))
                }
            };
            let cfg = SolverConfig::new(c.iters, c.rho, c.lambda, spec);
            admm_reconstruct(&y, b, &cfg, weights.as_ref())?
        }
        MethodArg::Unrolled => {
            let path = c.weights.as_ref().ok_or(Error::MissingWeights)?;
            unrolled_forward(&y, b, &load_unrolled_weights(path)?)?
        }
    };
    if c.clamp {
        let peak = BitDepth::new(c.target_bits)?.peak();
        x = x.map(|v| v.clamp(0.0, peak));
    }
    write_float_image(&c.out, &x)
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum KindArg {
    GaussianBumps,
    Ramp,
    Step,
    Checker,
}

impl From<KindArg> for SceneKind {
    fn from(k: KindArg) -> SceneKind {
        match k {
            KindArg::GaussianBumps => SceneKind::GaussianBumps,
            KindArg::Ramp => SceneKind::Ramp,
            KindArg::Step => SceneKind::Step,
            KindArg::Checker => SceneKind::Checker,
        }
    }
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Peak DN value of the scene (10-bit default).
    #[arg(long, default_value_t = 1023.0)]
    peak: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep real-valued samples instead of rounding to integer DN.
    #[arg(long)]
    float: bool,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn run_synth(c: SynthCmd) -> Result<()> {
    let mut img = synth_scene(c.kind.into(), c.height, c.width, c.channels, c.peak, c.seed)?;
    if !c.float {
        img = img.map(f64::round);
    }
    write_float_image(&c.out, &img)
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SpecArg {
    Small,
    Medium,
    Large,
}

impl SpecArg {
    fn arch(self, channels: usize) -> ConvArch {
        match self {
            SpecArg::Small => ConvArch::small(channels),
            SpecArg::Medium => ConvArch::medium(channels),
            SpecArg::Large => ConvArch::large(channels),
        }
    }
}

#[derive(Args)]
struct TrainDenoiserCmd {
    /// Dataset manifest; its train split feeds the run.
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Architecture preset.
    #[arg(long, value_enum, default_value_t = SpecArg::Small)]
    spec: SpecArg,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Seed; defaults to the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    /// Write the per-step loss history to this CSV file.
    #[arg(long, value_name = "PATH")]
    loss_csv: Option<PathBuf>,
    /// Output weight file.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn run_train_denoiser(c: TrainDenoiserCmd) -> Result<()> {
    let manifest = DatasetManifest::load(&c.manifest)?;
    let images = manifest.load_images(Role::Train)?;
    let channels = images.first().ok_or(Error::EmptyDataset)?.channels();
    let seed = c.seed.unwrap_or(manifest.seed);

    let mut cfg = TrainConfig::pretrain(seed);
    cfg.steps = c.steps;
    if let Some(lr) = c.lr {
        cfg.lr = lr;
    }
    if let Some(batch) = c.batch {
        cfg.batch = batch;
    }
    if let Some(patch) = c.patch {
        cfg.patch = patch;
    }

    let (weights, history) = pretrain_denoiser(&images, c.spec.arch(channels), &cfg)?;
    let prov = Provenance { seed, phase: "pretrain".into(), steps: c.steps };
    save_weights(&c.out, &WeightPayload::Denoiser(weights), Some(prov))?;
    if let Some(p) = &c.loss_csv {
        write_csv(p, &history)?;
    }
    if let Some(last) = history.last() {
        println!("pretrain: {} steps, final loss {:.6}", c.steps, last.loss);
    }
    Ok(())
}

#[derive(Args)]
struct TrainUnrolledCmd {
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Starting weights: denoiser weights seed a fresh unrolled network,
    /// unrolled weights continue training.
    #[arg(long, value_name = "PATH")]
    weights: PathBuf,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Modulo bit depth the training measurements are wrapped at.
    #[arg(long, default_value_t = 8)]
    bits: u32,
    /// Layer count when starting from denoiser weights.
    #[arg(long, default_value_t = DEFAULT_T_LAYERS)]
    t_layers: usize,
    /// Initial per-layer penalty when starting from denoiser weights.
    #[arg(long, default_value_t = 0.5)]
    rho0: f64,
    /// Initial per-layer denoiser noise level when starting from denoiser
    /// weights.
    #[arg(long, default_value_t = 25.0)]
    sigma0: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long, value_name = "PATH")]
    loss_csv: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn run_train_unrolled(c: TrainUnrolledCmd) -> Result<()> {
    let manifest = DatasetManifest::load(&c.manifest)?;
    let images = manifest.load_images(Role::Train)?;
    let b = BitDepth::new(c.bits)?;
    let seed = c.seed.unwrap_or(manifest.seed);

    let start = match load_weights(&c.weights)?.0 {
        WeightPayload::Denoiser(dn) => {
            UnrolledWeights::from_denoiser(dn, c.t_layers, c.rho0, c.sigma0)?
        }
        WeightPayload::Unrolled(w) => w,
    };

    let mut cfg = TrainConfig::end_to_end(seed);
    cfg.steps = c.steps;
    if let Some(lr) = c.lr {
        cfg.lr = lr;
    }
    if let Some(batch) = c.batch {
        cfg.batch = batch;
    }
    if let Some(patch) = c.patch {
        cfg.patch = patch;
    }

    let (weights, history) = train_unrolled(&images, start, b, &cfg)?;
    let prov = Provenance { seed, phase: "end-to-end".into(), steps: c.steps };
    save_weights(&c.out, &WeightPayload::Unrolled(weights), Some(prov))?;
    if let Some(p) = &c.loss_csv {
        write_csv(p, &history)?;
    }
    if let Some(last) = history.last() {
        println!("end-to-end: {} steps, final loss {:.6}", c.steps, last.loss);
    }
    Ok(())
}

#[derive(Args)]
struct FinetuneSeCmd {
    /// Directory of wrapped measurements (PNG/PFM), loaded in sorted
    /// filename order.
    #[arg(long, value_name = "DIR")]
    wrapped_dir: PathBuf,
    /// Unrolled weights to fine-tune.
    #[arg(long, value_name = "PATH")]
    weights: PathBuf,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Modulo bit depth of the wrapped measurements.
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long, default_value_t = 0.75)]
    alpha_lo: f64,
    #[arg(long, default_value_t = 1.25)]
    alpha_hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_name = "PATH")]
    loss_csv: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn run_finetune_se(c: FinetuneSeCmd) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&c.wrapped_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|s| s.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pfm") || e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let wrapped: Vec<Image> = paths.iter().map(|p| read_image(p)).collect::<Result<_>>()?;

    let b = BitDepth::new(c.bits)?;
    let start = load_unrolled_weights(&c.weights)?;
    let mut cfg = TrainConfig::self_equivariance(c.seed);
    cfg.steps = c.steps;
    cfg.alpha_range = (c.alpha_lo, c.alpha_hi);
    if let Some(lr) = c.lr {
        cfg.lr = lr;
    }

    let (weights, history) = finetune_se(&wrapped, start, b, &cfg)?;
    let prov = Provenance { seed: c.seed, phase: "self-equivariance".into(), steps: c.steps };
    save_weights(&c.out, &WeightPayload::Unrolled(weights), Some(prov))?;
    if let Some(p) = &c.loss_csv {
        write_csv(p, &history)?;
    }
    if let Some(last) = history.last() {
        println!("self-equivariance: {} steps, final loss {:.6}", c.steps, last.loss);
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum AlignArg {
    None,
    Mean,
    Snap,
}

#[derive(Args)]
struct EvalCmd {
    /// Reference scene.
    #[arg(long = "ref", value_name = "PATH")]
    reference: PathBuf,
    /// Estimate to score.
    #[arg(long, value_name = "PATH")]
    est: PathBuf,
    /// DC alignment applied to the estimate before scoring.
    #[arg(long, value_enum, default_value_t = AlignArg::Mean)]
    align: AlignArg,
    /// Wrap depth used by --align snap.
    #[arg(long, default_value_t = 8)]
    bits: u32,
    /// PSNR peak; defaults from the reference's bit-depth hint (1023
    /// when unknown).
    #[arg(long)]
    peak: Option<f64>,
    /// Print the full JSON report instead of a CSV row.
    #[arg(long)]
    json: bool,
}

fn run_eval(c: EvalCmd) -> Result<()> {
    let reference = read_image(&c.reference)?;
    let estimate = read_image(&c.est)?;
    let mode = match c.align {
        AlignArg::None => AlignMode::None,
        AlignArg::Mean => AlignMode::Mean,
        AlignArg::Snap => AlignMode::Snap(BitDepth::new(c.bits)?),
    };
    let report = evaluate(&reference, &estimate, c.peak, mode)?;
    if c.json {
        println!("{}", report.to_json()?);
    } else {
        println!("{}", MetricReport::CSV_HEADER);
        println!("{}", report.csv_row());
    }
    Ok(())
}

#[derive(Args)]
struct TonemapCmd {
    /// HDR input (PFM or PNG).
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Exposure applied before compression.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Luminance compression knee: L/(L+beta).
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// PNG container depth for the display image (8 or 16).
    #[arg(long, default_value_t = 8)]
    bits: u32,
    /// Output: PNG scales the [0,1) result to the container range,
    /// PFM keeps raw floats.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn run_tonemap(c: TonemapCmd) -> Result<()> {
    let x = read_image(&c.input)?;
    let mapped = reinhard_tonemap(&x, c.alpha, c.beta, c.epsilon)?;
    let ext = c.out.extension().and_then(|s| s.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("pfm") {
        write_pfm(&c.out, &mapped)
    } else {
        let peak = BitDepth::new(c.bits)?.peak();
        write_png(&c.out, &mapped.map(|v| v * peak), c.bits)
    }
}
