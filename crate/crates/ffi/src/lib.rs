//! C ABI over the modhdr library.
//!
//! Handles are opaque pointers owned by the caller and released with
//! [`mhdr_image_free`]. Every fallible call returns an [`MhdrStatus`]; on
//! failure [`mhdr_last_error`] yields a thread-local message that stays
//! valid until the next failing call on the same thread. The companion
//! header is generated into `include/modhdr.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use modhdr::denoise::DenoiserSpec;
use modhdr::image::{BitDepth, Image};
use modhdr::io::{load_weights, read_pfm, read_png, write_pfm, write_png, WeightPayload};
use modhdr::metrics::{align_dc, psnr_l, psnr_mu, q_index, ssim, AlignMode};
use modhdr::modulo::{sense, wrap, NoiseModel};
use modhdr::scene::{synth_scene, SceneKind};
use modhdr::solver::{
    admm_reconstruct, itoh_baseline, unrolled_forward, DcPolicy, SolverConfig,
};
use modhdr::tonemap::reinhard_tonemap;
use modhdr::Error;

/// Call outcome. Zero is success; anything else leaves a message in
/// [`mhdr_last_error`].
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MhdrStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// Arguments were structurally valid but semantically rejected.
    InvalidArgument = 3,
    /// Shape, channel count, or bit depth outside the supported range.
    Unsupported = 4,
    /// Filesystem failure.
    Io = 5,
    /// Malformed or mismatched file contents.
    Format = 6,
    /// Internal failure (a panic was caught at the boundary).
    Internal = 7,
}

/// Opaque image handle: planar float64 samples, 1 or 3 channels.
pub struct MhdrImage {
    inner: Image,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_message(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).unwrap_or_default();
    });
}

fn fail(status: MhdrStatus, msg: &str) -> MhdrStatus {
    set_message(msg);
    status
}

fn fail_with(e: &Error) -> MhdrStatus {
    let status = match e {
        Error::Io(_) => MhdrStatus::Io,
        Error::MalformedHeader(_)
        | Error::BadMagic
        | Error::TruncatedPayload { .. }
        | Error::DirectoryMismatch(_)
        | Error::Json(_)
        | Error::Png(_) => MhdrStatus::Format,
        Error::InvalidDimensions { .. }
        | Error::UnsupportedChannels(_)
        | Error::UnsupportedBitDepth(_)
        | Error::ImageTooSmall { .. } => MhdrStatus::Unsupported,
        _ => MhdrStatus::InvalidArgument,
    };
    fail(status, &format!("{}: {}", e.code(), e))
}

/// Runs an FFI body, converting a panic into [`MhdrStatus::Internal`]
/// instead of unwinding across the C boundary.
fn guarded(f: impl FnOnce() -> MhdrStatus) -> MhdrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(MhdrStatus::Internal, "internal: panic caught at the C boundary"),
    }
}

unsafe fn image_ref<'a>(p: *const MhdrImage) -> Option<&'a Image> {
    p.as_ref().map(|h| &h.inner)
}

unsafe fn write_out(out: *mut *mut MhdrImage, img: Image) -> MhdrStatus {
    if out.is_null() {
        return fail(MhdrStatus::NullPointer, "out pointer is null");
    }
    *out = Box::into_raw(Box::new(MhdrImage { inner: img }));
    MhdrStatus::Ok
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, MhdrStatus> {
    if p.is_null() {
        return Err(fail(MhdrStatus::NullPointer, &format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MhdrStatus::Utf8, &format!("{what} is not valid UTF-8")))
}

fn bit_depth(bits: u32) -> Result<BitDepth, MhdrStatus> {
    BitDepth::new(bits).map_err(|e| fail_with(&e))
}

/// Message for the most recent failure on this thread; empty until a call
/// fails. The pointer is invalidated by the next failing call.
#[no_mangle]
pub extern "C" fn mhdr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Allocates a zero-filled image. `channels` must be 1 or 3.
#[no_mangle]
pub unsafe extern "C" fn mhdr_image_new(
    height: usize,
    width: usize,
    channels: usize,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| match Image::new(height, width, channels) {
        Ok(img) => write_out(out, img),
        Err(e) => fail_with(&e),
    })
}

/// Allocates an image from `len = height * width * channels` planar
/// samples (all of channel 0 row-major, then channel 1, ...).
#[no_mangle]
pub unsafe extern "C" fn mhdr_image_from_data(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        if data.is_null() {
            return fail(MhdrStatus::NullPointer, "data is null");
        }
        let slice = std::slice::from_raw_parts(data, len);
        match Image::from_vec(height, width, channels, slice.to_vec()) {
            Ok(img) => write_out(out, img),
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases an image handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn mhdr_image_free(img: *mut MhdrImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Writes the image dimensions through the non-null out pointers.
#[no_mangle]
pub unsafe extern "C" fn mhdr_image_dims(
    img: *const MhdrImage,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> MhdrStatus {
    guarded(|| {
        let Some(x) = image_ref(img) else {
            return fail(MhdrStatus::NullPointer, "image is null");
        };
        let (h, w, c) = x.dims();
        if !height.is_null() {
            *height = h;
        }
        if !width.is_null() {
            *width = w;
        }
        if !channels.is_null() {
            *channels = c;
        }
        MhdrStatus::Ok
    })
}

/// Total sample count (`height * width * channels`); 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mhdr_image_len(img: *const MhdrImage) -> usize {
    image_ref(img).map_or(0, |x| x.data().len())
}

/// Borrowed pointer to the planar samples, valid while the handle lives;
/// null for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mhdr_image_data(img: *const MhdrImage) -> *const f64 {
    image_ref(img).map_or(std::ptr::null(), |x| x.data().as_ptr())
}

/// Generates a synthetic scene. `kind` is one of "gaussian-bumps", "ramp",
/// "step", "checker"; `peak` is the brightest value in DN.
#[no_mangle]
pub unsafe extern "C" fn mhdr_synth_scene(
    kind: *const c_char,
    height: usize,
    width: usize,
    channels: usize,
    peak: f64,
    seed: u64,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        let kind = match str_arg(kind, "kind") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let kind = match kind {
            "gaussian-bumps" => SceneKind::GaussianBumps,
            "ramp" => SceneKind::Ramp,
            "step" => SceneKind::Step,
            "checker" => SceneKind::Checker,
            other => {
                return fail(
                    MhdrStatus::InvalidArgument,
                    &format!("unknown scene kind {other:?}"),
                )
            }
        };
        match synth_scene(kind, height, width, channels, peak, seed) {
            Ok(img) => write_out(out, img),
            Err(e) => fail_with(&e),
        }
    })
}

/// Wraps a scene into the `[0, 2^bits)` modulo range, noise-free.
#[no_mangle]
pub unsafe extern "C" fn mhdr_wrap(
    x: *const MhdrImage,
    bits: u32,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        let Some(img) = image_ref(x) else {
            return fail(MhdrStatus::NullPointer, "image is null");
        };
        let b = match bit_depth(bits) {
            Ok(b) => b,
            Err(status) => return status,
        };
        write_out(out, wrap(img, b))
    })
}

/// Simulates a modulo sensor read: Gaussian noise of `sigma` DN is added
/// before wrapping. `sigma <= 0` degenerates to a clean wrap.
#[no_mangle]
pub unsafe extern "C" fn mhdr_sense(
    x: *const MhdrImage,
    bits: u32,
    sigma: f64,
    seed: u64,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        let Some(img) = image_ref(x) else {
            return fail(MhdrStatus::NullPointer, "image is null");
        };
        let b = match bit_depth(bits) {
            Ok(b) => b,
            Err(status) => return status,
        };
        if sigma <= 0.0 {
            return write_out(out, wrap(img, b));
        }
        match sense(img, b, &NoiseModel::new(sigma, seed)) {
            Ok(y) => write_out(out, y),
            Err(e) => fail_with(&e),
        }
    })
}

/// Reconstructs by least-squares integration of the wrapped gradient, with
/// the mean pinned to the measurement mean.
#[no_mangle]
pub unsafe extern "C" fn mhdr_reconstruct_itoh(
    y: *const MhdrImage,
    bits: u32,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        let Some(img) = image_ref(y) else {
            return fail(MhdrStatus::NullPointer, "measurement is null");
        };
        let b = match bit_depth(bits) {
            Ok(b) => b,
            Err(status) => return status,
        };
        match itoh_baseline(img, b, DcPolicy::MeasurementMean) {
            Ok(rec) => write_out(out, rec),
            Err(e) => fail_with(&e),
        }
    })
}

/// Reconstructs by ADMM with the transform-threshold denoiser; the plug-in
/// denoiser runs at `sqrt(lambda / rho)`.
#[no_mangle]
pub unsafe extern "C" fn mhdr_reconstruct_admm(
    y: *const MhdrImage,
    bits: u32,
    iters: usize,
    rho: f64,
    lambda: f64,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        let Some(img) = image_ref(y) else {
            return fail(MhdrStatus::NullPointer, "measurement is null");
        };
        let b = match bit_depth(bits) {
            Ok(b) => b,
            Err(status) => return status,
        };
        let cfg = SolverConfig::new(iters, rho, lambda, DenoiserSpec::default_dct_threshold());
        match admm_reconstruct(img, b, &cfg, None) {
            Ok(rec) => write_out(out, rec),
            Err(e) => fail_with(&e),
        }
    })
}

/// Runs the unrolled network loaded from a weight file produced by the
/// trainer. The file must hold unrolled weights, not bare denoiser weights.
#[no_mangle]
pub unsafe extern "C" fn mhdr_reconstruct_unrolled(
    y: *const MhdrImage,
    bits: u32,
    weights_path: *const c_char,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        let Some(img) = image_ref(y) else {
            return fail(MhdrStatus::NullPointer, "measurement is null");
        };
        let b = match bit_depth(bits) {
            Ok(b) => b,
            Err(status) => return status,
        };
        let path = match str_arg(weights_path, "weights_path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let w = match load_weights(Path::new(path)) {
            Ok((WeightPayload::Unrolled(w), _)) => w,
            Ok((WeightPayload::Denoiser(_), _)) => {
                return fail(
                    MhdrStatus::InvalidArgument,
                    "weight file holds denoiser weights, not an unrolled model",
                )
            }
            Err(e) => return fail_with(&e),
        };
        match unrolled_forward(img, b, &w) {
            Ok(rec) => write_out(out, rec),
            Err(e) => fail_with(&e),
        }
    })
}

/// Shifts `est` so its mean matches `ref`; reconstructions from wrapped
/// data are only determined up to a constant.
#[no_mangle]
pub unsafe extern "C" fn mhdr_align_dc_mean(
    reference: *const MhdrImage,
    estimate: *const MhdrImage,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        let (Some(r), Some(e)) = (image_ref(reference), image_ref(estimate)) else {
            return fail(MhdrStatus::NullPointer, "image is null");
        };
        match align_dc(r, e, AlignMode::Mean) {
            Ok(a) => write_out(out, a),
            Err(err) => fail_with(&err),
        }
    })
}

unsafe fn metric(
    reference: *const MhdrImage,
    estimate: *const MhdrImage,
    out: *mut f64,
    f: impl FnOnce(&Image, &Image) -> Result<f64, Error>,
) -> MhdrStatus {
    let (Some(r), Some(e)) = (image_ref(reference), image_ref(estimate)) else {
        return fail(MhdrStatus::NullPointer, "image is null");
    };
    if out.is_null() {
        return fail(MhdrStatus::NullPointer, "out pointer is null");
    }
    match f(r, e) {
        Ok(v) => {
            *out = v;
            MhdrStatus::Ok
        }
        Err(err) => fail_with(&err),
    }
}

/// Linear-domain PSNR against `peak`; identical images yield +infinity.
#[no_mangle]
pub unsafe extern "C" fn mhdr_psnr_l(
    reference: *const MhdrImage,
    estimate: *const MhdrImage,
    peak: f64,
    out: *mut f64,
) -> MhdrStatus {
    guarded(|| {
        metric(reference, estimate, out, |r, e| {
            psnr_l(r, e, peak).map(|db| db.value())
        })
    })
}

/// PSNR after mu-law tone compression of both images; identical images
/// yield +infinity.
#[no_mangle]
pub unsafe extern "C" fn mhdr_psnr_mu(
    reference: *const MhdrImage,
    estimate: *const MhdrImage,
    peak: f64,
    out: *mut f64,
) -> MhdrStatus {
    guarded(|| {
        metric(reference, estimate, out, |r, e| {
            psnr_mu(r, e, peak).map(|db| db.value())
        })
    })
}

/// Mean single-scale SSIM; inputs are expected in [0, 1].
#[no_mangle]
pub unsafe extern "C" fn mhdr_ssim(
    reference: *const MhdrImage,
    estimate: *const MhdrImage,
    out: *mut f64,
) -> MhdrStatus {
    guarded(|| metric(reference, estimate, out, |r, e| ssim(r, e)))
}

/// Mean universal quality index over 8x8 sliding windows.
#[no_mangle]
pub unsafe extern "C" fn mhdr_q_index(
    reference: *const MhdrImage,
    estimate: *const MhdrImage,
    out: *mut f64,
) -> MhdrStatus {
    guarded(|| metric(reference, estimate, out, |r, e| q_index(r, e)))
}

/// Global Reinhard tone mapping for display: exposure `alpha`, then
/// luminance compression `L / (L + beta)` with the gain shared across
/// channels. Samples must be nonnegative.
#[no_mangle]
pub unsafe extern "C" fn mhdr_tonemap_reinhard(
    x: *const MhdrImage,
    alpha: f64,
    beta: f64,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        let Some(img) = image_ref(x) else {
            return fail(MhdrStatus::NullPointer, "image is null");
        };
        match reinhard_tonemap(img, alpha, beta, 1e-6) {
            Ok(t) => write_out(out, t),
            Err(e) => fail_with(&e),
        }
    })
}

/// Reads a PFM file (grayscale or RGB, float32).
#[no_mangle]
pub unsafe extern "C" fn mhdr_read_pfm(
    path: *const c_char,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match read_pfm(Path::new(path)) {
            Ok(img) => write_out(out, img),
            Err(e) => fail_with(&e),
        }
    })
}

/// Writes a PFM file; float32 samples survive a round trip exactly.
#[no_mangle]
pub unsafe extern "C" fn mhdr_write_pfm(
    path: *const c_char,
    img: *const MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let Some(x) = image_ref(img) else {
            return fail(MhdrStatus::NullPointer, "image is null");
        };
        match write_pfm(Path::new(path), x) {
            Ok(()) => MhdrStatus::Ok,
            Err(e) => fail_with(&e),
        }
    })
}

/// Reads an 8- or 16-bit PNG into integer DN samples.
#[no_mangle]
pub unsafe extern "C" fn mhdr_read_png(
    path: *const c_char,
    out: *mut *mut MhdrImage,
) -> MhdrStatus {
    guarded(|| {
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match read_png(Path::new(path)) {
            Ok(img) => write_out(out, img),
            Err(e) => fail_with(&e),
        }
    })
}

/// Writes a PNG at `bits` in {8, 16}; samples must already be integers in
/// range.
#[no_mangle]
pub unsafe extern "C" fn mhdr_write_png(
    path: *const c_char,
    img: *const MhdrImage,
    bits: u32,
) -> MhdrStatus {
    guarded(|| {
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let Some(x) = image_ref(img) else {
            return fail(MhdrStatus::NullPointer, "image is null");
        };
        match write_png(Path::new(path), x, bits) {
            Ok(()) => MhdrStatus::Ok,
            Err(e) => fail_with(&e),
        }
    })
}
