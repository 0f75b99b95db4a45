//! Error type shared across the crate.
//!
//! Every variant carries a stable short code (see [`Error::code`]) so the
//! CLI can emit machine-greppable `error: <code>: <message>` lines.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimensions {h}x{w} below minimum {min}x{min}")]
    InvalidDimensions { h: usize, w: usize, min: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("channel count {0} unsupported (expected 1 or 3)")]
    UnsupportedChannels(usize),
    #[error("bit depth {0} outside supported range 1..=24")]
    UnsupportedBitDepth(u32),
    #[error("rho must be positive and finite, got {0}")]
    InvalidRho(f64),
    #[error("median window must be odd, got {0}")]
    InvalidWindow(usize),
    #[error("conv denoiser selected but no weights supplied")]
    MissingWeights,
    #[error("image {h}x{w} smaller than {win}x{win} metric window")]
    ImageTooSmall { h: usize, w: usize, win: usize },
    #[error("value {value} outside {bits}-bit integer range")]
    RangeOverflow { value: f64, bits: u32 },
    #[error("negative sample {0} in an image expected to be nonnegative")]
    NegativeInput(f64),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("bad magic bytes (not a weight file)")]
    BadMagic,
    #[error("payload holds {got} bytes, tensor directory requires {expected}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("tensor directory mismatch: {0}")]
    DirectoryMismatch(String),
    #[error("dataset has no usable images")]
    EmptyDataset,
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("png: {0}")]
    Png(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable short code for CLI error lines and FFI status mapping.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidDimensions { .. } => "invalid-dimensions",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::UnsupportedChannels(_) => "unsupported-channels",
            Error::UnsupportedBitDepth(_) => "unsupported-bit-depth",
            Error::InvalidRho(_) => "invalid-rho",
            Error::InvalidWindow(_) => "invalid-window",
            Error::MissingWeights => "missing-weights",
            Error::ImageTooSmall { .. } => "image-too-small",
            Error::RangeOverflow { .. } => "range-overflow",
            Error::NegativeInput(_) => "negative-input",
            Error::MalformedHeader(_) => "malformed-header",
            Error::BadMagic => "bad-magic",
            Error::TruncatedPayload { .. } => "truncated-payload",
            Error::DirectoryMismatch(_) => "directory-mismatch",
            Error::EmptyDataset => "empty-dataset",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Png(_) => "png",
        }
    }
}
