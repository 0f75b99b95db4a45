//! File formats: PFM float images, integer PNGs, weight files, and dataset
//! manifests.
//!
//! Every writer goes through [`write_atomic`]: content lands in a temp file
//! in the destination directory and is renamed into place, so interrupted
//! runs never leave truncated artifacts behind.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub mod manifest;
pub mod pfm;
pub mod png;
pub mod weights;

pub use manifest::{DatasetManifest, ManifestEntry, Role};
pub use pfm::{read_pfm, write_pfm};
pub use png::{read_png, write_png};
pub use weights::{load_weights, save_weights, Provenance, WeightPayload};

use crate::image::Image;

/// Reads an image by extension: `.pfm` or `.png` (case-insensitive).
pub fn read_image(path: &Path) -> Result<Image> {
    let ext = path
        .extension()
        .and_then(|s| s.to_str())
        .map(|s| s.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pfm" => read_pfm(path),
        "png" => read_png(path),
        _ => Err(Error::InvalidArgument(format!(
            "unsupported image extension in {} (expected .pfm or .png)",
            path.display()
        ))),
    }
}

/// Writes `bytes` to `path` via a temp file in the same directory plus an
/// atomic rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
