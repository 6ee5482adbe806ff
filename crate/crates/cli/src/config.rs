//! Experiment configuration file: one JSON document wiring the model, the
//! training hyperparameters and the dataset together. Unknown keys are
//! rejected and semantic problems are reported all at once with their JSON
//! paths.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use triqa_core::data::SplitSpec;
use triqa_core::model::ModelConfig;
use triqa_core::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr_init: f64,
    pub lr_final: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            lr_init: d.lr_init,
            lr_final: d.lr_final,
            batch_size: d.batch_size,
            epochs: d.epochs,
            seed: d.seed,
            augment: d.augment,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: PathBuf,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_image_size")]
    pub image_size: (usize, usize),
}

fn default_image_size() -> (usize, usize) {
    (192, 192)
}

/// One backbone preset for the ablation sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackbonePreset {
    pub name: String,
    pub channels: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    /// Number of seeds averaged per row (seed, seed+1, ...).
    pub seeds: usize,
    /// Encoder width presets swept by `--axis backbones`.
    pub backbones: Vec<BackbonePreset>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            seeds: 3,
            backbones: vec![
                BackbonePreset {
                    name: "small".into(),
                    channels: [4, 8, 16, 32],
                },
                BackbonePreset {
                    name: "medium".into(),
                    channels: [8, 16, 32, 64],
                },
                BackbonePreset {
                    name: "large".into(),
                    channels: [16, 32, 64, 128],
                },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    pub data: DataSection,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ablate: AblateSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&raw)
            .map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?;
        let problems = cfg.validate();
        if !problems.is_empty() {
            anyhow::bail!(
                "config {} is invalid:\n  - {}",
                path.display(),
                problems.join("\n  - ")
            );
        }
        Ok(cfg)
    }

    /// All semantic problems at once, each prefixed with its JSON path.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        self.model.validate_into("model", &mut errs);
        self.train_config().validate_into("train", &mut errs);
        // image_size lives in the data section of the file.
        errs = errs
            .into_iter()
            .map(|e| e.replace("train.image_size", "data.image_size"))
            .collect();
        self.data.split.validate_into("data.split", &mut errs);
        if self.ablate.seeds == 0 {
            errs.push("ablate.seeds: must be >= 1".into());
        }
        if self.ablate.backbones.is_empty() {
            errs.push("ablate.backbones: must not be empty".into());
        }
        let mut names = BTreeSet::new();
        for (i, b) in self.ablate.backbones.iter().enumerate() {
            if b.channels.contains(&0) {
                errs.push(format!(
                    "ablate.backbones[{i}].channels: all entries must be positive"
                ));
            }
            if !names.insert(b.name.as_str()) {
                errs.push(format!("ablate.backbones[{i}].name: duplicate `{}`", b.name));
            }
        }
        errs
    }

    /// The training configuration with the resolution taken from the data
    /// section.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_init: self.train.lr_init,
            lr_final: self.train.lr_final,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.train.seed,
            augment: self.train.augment,
            image_size: self.data.image_size,
        }
    }
}

/// Hex SHA-256 of the canonical JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("serializable config");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the experiment content: everything except `output_dir`, so the
/// same experiment hashes identically wherever its artifacts land.
pub fn experiment_hash(cfg: &ExperimentConfig) -> String {
    let mut value = serde_json::to_value(cfg).expect("serializable config");
    value.as_object_mut().expect("object").remove("output_dir");
    config_hash(&value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "data": { "manifest": "bench/manifest.csv" },
            "output_dir": "runs/exp"
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(&minimal_json()).unwrap();
        assert!(cfg.validate().is_empty());
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.data.image_size, (192, 192));
        assert_eq!(cfg.ablate.seeds, 3);
        let tc = cfg.train_config();
        assert_eq!(tc.image_size, (192, 192));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"{"data": {"manifest": "m.csv"}, "output_dir": "o", "typo": 1}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
    }

    #[test]
    fn validation_collects_all_problems_with_paths() {
        let mut cfg: ExperimentConfig = serde_json::from_str(&minimal_json()).unwrap();
        cfg.train.lr_final = 1.0;
        cfg.train.batch_size = 0;
        cfg.data.image_size = (50, 50);
        cfg.data.split.train_fraction = 1.5;
        cfg.model.fc_dims = [0, 64];
        let errs = cfg.validate();
        let joined = errs.join("\n");
        for needle in [
            "train.lr_final",
            "train.batch_size",
            "data.image_size",
            "data.split.train_fraction",
            "model.fc_dims",
        ] {
            assert!(joined.contains(needle), "missing {needle} in:\n{joined}");
        }
    }

    #[test]
    fn config_json_round_trip_and_stable_hash() {
        let cfg: ExperimentConfig = serde_json::from_str(&minimal_json()).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(config_hash(&cfg), config_hash(&back));
    }
}
