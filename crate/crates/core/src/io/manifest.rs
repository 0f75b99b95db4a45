//! Dataset manifests: a JSON index of image files with roles and depths.
//!
//! A manifest pins everything a training run needs to be reproducible: the
//! image list with train/val/test roles, the global seed, and the bit depth
//! every image is standardized to on load. Paths are resolved relative to
//! the manifest file, so a dataset directory can be moved wholesale.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BitDepth, Image};
use crate::io::{read_image, write_atomic};
use crate::modulo::standardize_bits;

/// Which split an image belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

/// One image reference: path relative to the manifest, its nominal depth,
/// and its split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bit_depth: u32,
    pub role: Role,
}

/// A dataset description loaded from JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    /// Depth every image is rescaled to by [`DatasetManifest::load_images`].
    pub target_bits: u32,
    pub images: Vec<ManifestEntry>,
    #[serde(skip)]
    base: PathBuf,
}

impl DatasetManifest {
    pub fn new(seed: u64, target_bits: u32, images: Vec<ManifestEntry>) -> DatasetManifest {
        DatasetManifest { seed, target_bits, images, base: PathBuf::new() }
    }

    /// Loads and validates: the target depth is supported, no path appears
    /// twice (roles are disjoint), and every referenced file exists.
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let bytes = fs::read(path)?;
        let mut m: DatasetManifest = serde_json::from_slice(&bytes)?;
        m.base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        m.validate()?;
        Ok(m)
    }

    /// Writes the manifest as sorted-key JSON. Referenced files need not
    /// exist yet; existence is checked on load.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&serde_json::to_value(self)?)?;
        write_atomic(path, format!("{json}\n").as_bytes())
    }

    fn validate(&self) -> Result<()> {
        BitDepth::new(self.target_bits)?;
        let mut seen = HashSet::new();
        for e in &self.images {
            BitDepth::new(e.bit_depth)?;
            if !seen.insert(e.path.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "manifest lists {} more than once",
                    e.path
                )));
            }
            let p = self.resolve(e);
            if !p.is_file() {
                return Err(Error::InvalidArgument(format!(
                    "manifest references missing file {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// Absolute-ish path of an entry (relative paths join the manifest dir).
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base.join(&entry.path)
    }

    pub fn entries(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.images.iter().filter(move |e| e.role == role)
    }

    /// Reads every image in `role` (PFM or PNG by extension) and rescales
    /// each to the manifest's target depth.
    pub fn load_images(&self, role: Role) -> Result<Vec<Image>> {
        let target = BitDepth::new(self.target_bits)?;
        let mut out = Vec::new();
        for e in self.entries(role) {
            let img = read_image(&self.resolve(e))?;
            out.push(standardize_bits(&img, target));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_pfm, write_png};
    use crate::testutil::Mix64;

    fn entry(path: &str, role: Role) -> ManifestEntry {
        ManifestEntry { path: path.into(), bit_depth: 10, role }
    }

    fn write_fixtures(dir: &Path) {
        let mut rng = Mix64::new(5);
        fs::create_dir_all(dir.join("imgs")).unwrap();
        for name in ["a.png", "b.png"] {
            let img =
                Image::from_fn(8, 8, 1, |_, _, _| (rng.next_u64() % 1024) as f64).unwrap();
            write_png(&dir.join("imgs").join(name), &img, 16).unwrap();
        }
        let img = Image::from_fn(8, 8, 1, |_, _, _| rng.next_f64() as f32 as f64).unwrap();
        write_pfm(&dir.join("imgs/c.pfm"), &img).unwrap();
    }

    #[test]
    fn round_trip_resolves_relative_to_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_fixtures(dir.path());
        let m = DatasetManifest::new(
            9,
            10,
            vec![
                entry("imgs/a.png", Role::Train),
                entry("imgs/b.png", Role::Train),
                entry("imgs/c.pfm", Role::Test),
            ],
        );
        let mpath = dir.path().join("data.json");
        m.save(&mpath).unwrap();

        let loaded = DatasetManifest::load(&mpath).unwrap();
        assert_eq!(loaded.seed, 9);
        assert_eq!(loaded.entries(Role::Train).count(), 2);
        assert_eq!(loaded.entries(Role::Val).count(), 0);

        // Images standardize to the 10-bit peak on load.
        let train = loaded.load_images(Role::Train).unwrap();
        assert_eq!(train.len(), 2);
        for img in &train {
            assert!((img.max_value() - 1023.0).abs() < 1e-9);
            assert_eq!(img.bit_depth_hint, Some(10));
        }

        // Sorted-key JSON for golden-file diffs.
        let json = fs::read_to_string(&mpath).unwrap();
        assert!(json.find("\"images\"").unwrap() < json.find("\"seed\"").unwrap());
        assert!(json.find("\"seed\"").unwrap() < json.find("\"target_bits\"").unwrap());
    }

    #[test]
    fn duplicate_and_missing_paths_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_fixtures(dir.path());
        let mpath = dir.path().join("data.json");

        let dup = DatasetManifest::new(
            0,
            10,
            vec![entry("imgs/a.png", Role::Train), entry("imgs/a.png", Role::Test)],
        );
        dup.save(&mpath).unwrap();
        assert!(matches!(
            DatasetManifest::load(&mpath),
            Err(Error::InvalidArgument(msg)) if msg.contains("more than once")
        ));

        let missing = DatasetManifest::new(0, 10, vec![entry("imgs/nope.png", Role::Train)]);
        missing.save(&mpath).unwrap();
        assert!(matches!(
            DatasetManifest::load(&mpath),
            Err(Error::InvalidArgument(msg)) if msg.contains("missing file")
        ));

        let bad_bits = DatasetManifest::new(0, 99, vec![entry("imgs/a.png", Role::Train)]);
        bad_bits.save(&mpath).unwrap();
        assert!(matches!(
            DatasetManifest::load(&mpath),
            Err(Error::UnsupportedBitDepth(99))
        ));
    }

    #[test]
    fn unknown_extension_is_rejected_on_image_load() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x.bmp"), b"junk").unwrap();
        let mut m = DatasetManifest::new(0, 10, vec![entry("x.bmp", Role::Train)]);
        m.base = dir.path().to_path_buf();
        assert!(matches!(
            m.load_images(Role::Train),
            Err(Error::InvalidArgument(msg)) if msg.contains("extension")
        ));
    }
}
