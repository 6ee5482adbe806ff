//! Dataset ingestion, image decoding, splits, augmentation and the synthetic
//! benchmark generator.

mod augment;
mod image_io;
mod manifest;
mod split;
mod synth;

pub use augment::{augment_flip, flip_h, flip_v};
pub use image_io::{denormalize_u8, load_image, normalize_u8, resize_bilinear, save_image};
pub use manifest::{load_manifest, write_manifest};
pub use split::{split, SplitSpec};
pub use synth::{
    gen_reference, make_synthetic_benchmark, proxy_mos, synth_distort, DistortionKind,
    DistortionSpec,
};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One dataset row: a reference image, a distorted query image, and the
/// quality label in dataset units.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePairRecord {
    pub reference_path: String,
    pub distorted_path: String,
    pub mos: f64,
}

/// An ordered list of image pairs. Paths are kept verbatim as written in the
/// manifest; relative ones resolve against `base_dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<ImagePairRecord>,
    base_dir: PathBuf,
    label_range: Option<(f64, f64)>,
}

impl Dataset {
    pub fn from_records(records: Vec<ImagePairRecord>, base_dir: PathBuf) -> Self {
        let label_range = compute_label_range(&records);
        Dataset {
            records,
            base_dir,
            label_range,
        }
    }

    pub fn records(&self) -> &[ImagePairRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// `(lo, hi)` over the labels; `None` for an empty dataset.
    pub fn label_range(&self) -> Option<(f64, f64)> {
        self.label_range
    }

    /// Resolves a record path against the dataset base directory.
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Distinct reference paths in first-appearance order.
    pub fn reference_groups(&self) -> Vec<&str> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.reference_path.as_str()) {
                out.push(r.reference_path.as_str());
            }
        }
        out
    }

    /// First `n` records, keeping the base directory.
    pub fn take(&self, n: usize) -> Dataset {
        Dataset::from_records(self.records[..n.min(self.records.len())].to_vec(),
                              self.base_dir.clone())
    }

    pub(crate) fn require_non_empty(&self, context: &'static str) -> Result<()> {
        if self.records.is_empty() {
            Err(Error::EmptyDataset { context })
        } else {
            Ok(())
        }
    }
}

fn compute_label_range(records: &[ImagePairRecord]) -> Option<(f64, f64)> {
    let mut it = records.iter().map(|r| r.mos);
    let first = it.next()?;
    let mut lo = first;
    let mut hi = first;
    for v in it {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Some((lo, hi))
}
