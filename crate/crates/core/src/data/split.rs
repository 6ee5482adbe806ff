//! Train/validation splitting, by reference group by default so no reference
//! content leaks across the boundary.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub group_by_reference: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
            group_by_reference: true,
        }
    }
}

impl SplitSpec {
    pub fn validate_into(&self, prefix: &str, errs: &mut Vec<String>) {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            errs.push(format!(
                "{prefix}.train_fraction: must be in (0, 1), got {}",
                self.train_fraction
            ));
        }
    }
}

/// Deterministically partitions a dataset. With grouping, shuffled reference
/// groups are assigned whole: train gets `floor(train_fraction * n_groups)`
/// of them. Record order within each side follows the original dataset.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let mut errs = Vec::new();
    spec.validate_into("split", &mut errs);
    if !errs.is_empty() {
        return Err(Error::InvalidArgument(errs.join("; ")));
    }
    dataset.require_non_empty("split input")?;

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let in_train: Vec<bool> = if spec.group_by_reference {
        let groups = dataset.reference_groups();
        if groups.len() < 2 {
            return Err(Error::DegenerateSplit(format!(
                "grouped split needs at least 2 distinct references, found {}",
                groups.len()
            )));
        }
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.shuffle(&mut rng);
        let n_train = (spec.train_fraction * groups.len() as f64).floor() as usize;
        let train_groups: std::collections::BTreeSet<&str> =
            order[..n_train].iter().map(|&i| groups[i]).collect();
        dataset
            .records()
            .iter()
            .map(|r| train_groups.contains(r.reference_path.as_str()))
            .collect()
    } else {
        let n = dataset.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_train = (spec.train_fraction * n as f64).floor() as usize;
        let train_idx: std::collections::BTreeSet<usize> =
            order[..n_train].iter().copied().collect();
        (0..n).map(|i| train_idx.contains(&i)).collect()
    };

    let mut train = Vec::new();
    let mut val = Vec::new();
    for (r, &keep) in dataset.records().iter().zip(&in_train) {
        if keep {
            train.push(r.clone());
        } else {
            val.push(r.clone());
        }
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::DegenerateSplit(format!(
            "fraction {} leaves {} train / {} val records",
            spec.train_fraction,
            train.len(),
            val.len()
        )));
    }
    Ok((
        Dataset::from_records(train, dataset.base_dir().to_path_buf()),
        Dataset::from_records(val, dataset.base_dir().to_path_buf()),
    ))
}
