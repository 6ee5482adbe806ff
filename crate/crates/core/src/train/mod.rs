//! Training loop: seeded shuffling, flip augmentation, MSE objective, Adam
//! with cosine decay, per-epoch validation, best-SRCC model selection.

mod adam;
mod schedule;

pub use adam::AdamState;
pub use schedule::lr_schedule;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_flip, load_image, resize_bilinear, Dataset};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics;
use crate::model::IqaModel;
use crate::seeds::mix_seed;
use crate::tensor::{Parameter, Shape, Tensor};

const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
    /// `(h, w)`; images are resized here before batching.
    pub image_size: (usize, usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 1e-4,
            lr_final: 1e-6,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            augment: true,
            image_size: (192, 192),
        }
    }
}

impl TrainConfig {
    pub fn validate_into(&self, prefix: &str, errs: &mut Vec<String>) {
        let p = |field: &str| {
            if prefix.is_empty() {
                field.to_string()
            } else {
                format!("{prefix}.{field}")
            }
        };
        if !self.lr_init.is_finite() || self.lr_init <= 0.0 {
            errs.push(format!("{}: must be positive, got {}", p("lr_init"), self.lr_init));
        }
        if self.lr_final > self.lr_init {
            errs.push(format!(
                "{}: must be <= lr_init ({} > {})",
                p("lr_final"),
                self.lr_final,
                self.lr_init
            ));
        }
        if self.batch_size == 0 {
            errs.push(format!("{}: must be >= 1", p("batch_size")));
        }
        if self.epochs == 0 {
            errs.push(format!("{}: must be >= 1", p("epochs")));
        }
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || !h.is_multiple_of(16) || !w.is_multiple_of(16) {
            errs.push(format!(
                "{}: must be positive and divisible by 16, got ({h}, {w})",
                p("image_size")
            ));
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.validate_into("", &mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(errs.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_srcc_abs: f64,
    pub val_krcc_abs: f64,
    /// True when validation predictions (or labels) were constant and the
    /// rank metrics are undefined; the metric fields hold 0 then.
    pub val_degenerate: bool,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_srcc_abs: f64,
    pub checkpoint_path: Option<String>,
}

impl TrainReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
    }
}

/// Decoded-image cache, keyed by resolved path, values already resized to
/// the training resolution.
pub struct ImageCache {
    target: (usize, usize),
    map: HashMap<PathBuf, Tensor>,
}

impl ImageCache {
    pub fn new(target: (usize, usize)) -> Self {
        ImageCache {
            target,
            map: HashMap::new(),
        }
    }

    pub fn get(&mut self, dataset: &Dataset, path: &str) -> Result<Tensor> {
        let resolved = dataset.resolve(path);
        if let Some(t) = self.map.get(&resolved) {
            return Ok(t.clone());
        }
        let img = load_image(&resolved)?;
        let resized = resize_bilinear(&img, self.target.0, self.target.1);
        self.map.insert(resolved, resized.clone());
        Ok(resized)
    }
}

/// Forward-only predictions for every record, in dataset order.
pub fn predict_dataset(
    model: &IqaModel,
    dataset: &Dataset,
    cache: &mut ImageCache,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let mut preds = Vec::with_capacity(dataset.len());
    let records = dataset.records();
    for chunk in records.chunks(batch_size.max(1)) {
        let mut queries = Vec::with_capacity(chunk.len());
        let mut refs = Vec::with_capacity(chunk.len());
        for r in chunk {
            queries.push(cache.get(dataset, &r.distorted_path)?);
            refs.push(cache.get(dataset, &r.reference_path)?);
        }
        let q = Tensor::stack(&queries)?;
        let r = Tensor::stack(&refs)?;
        for v in model.predict(&q, &r)? {
            preds.push(v as f64);
        }
    }
    Ok(preds)
}

/// One row of the predictions CSV (`ref_path,dist_path,mos,pred`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub ref_path: String,
    pub dist_path: String,
    pub mos: f64,
    pub pred: f64,
}

pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Manifest {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    w.write_record(["ref_path", "dist_path", "mos", "pred"])
        .and_then(|_| {
            for r in rows {
                w.write_record([
                    r.ref_path.as_str(),
                    r.dist_path.as_str(),
                    &r.mos.to_string(),
                    &r.pred.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })
        .map_err(|e| Error::Manifest {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Manifest {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        rows.push(rec.map_err(|e| Error::Manifest {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Evaluation result: absolute rank correlations plus per-item predictions.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub n: usize,
    pub srcc_abs: f64,
    pub krcc_abs: f64,
    pub rows: Vec<PredictionRow>,
}

/// Scores every pair (no augmentation) and reports |SRCC| and |KRCC|
/// against the labels. Constant predictions are an explicit error, not a
/// metric value.
pub fn evaluate(
    model: &IqaModel,
    dataset: &Dataset,
    image_size: (usize, usize),
    batch_size: usize,
) -> Result<EvalReport> {
    dataset.require_non_empty("evaluation")?;
    let mut cache = ImageCache::new(image_size);
    let preds = predict_dataset(model, dataset, &mut cache, batch_size)?;
    let labels: Vec<f64> = dataset.records().iter().map(|r| r.mos).collect();
    let n = preds.len();
    let (srcc_abs, krcc_abs) = match (
        metrics::srcc(&preds, &labels),
        metrics::krcc(&preds, &labels),
    ) {
        (Ok(s), Ok(k)) => (s.abs(), k.abs()),
        (Err(Error::ConstantInput { .. }), _) | (_, Err(Error::ConstantInput { .. })) => {
            return Err(Error::DegenerateEvaluation { n });
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let rows = dataset
        .records()
        .iter()
        .zip(&preds)
        .map(|(r, &p)| PredictionRow {
            ref_path: r.reference_path.clone(),
            dist_path: r.distorted_path.clone(),
            mos: r.mos,
            pred: p,
        })
        .collect();
    Ok(EvalReport {
        n,
        srcc_abs,
        krcc_abs,
        rows,
    })
}

/// Trains in place and leaves the model at the best-validation-SRCC state.
/// Deterministic for a fixed config and single-threaded execution.
pub fn train(
    model: &mut IqaModel,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    train_set.require_non_empty("training")?;
    val_set.require_non_empty("validation")?;

    let n = train_set.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut adam = AdamState::new(model);
    let mut cache = ImageCache::new(cfg.image_size);
    let mut stats: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<Parameter>)> = None;
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng =
            ChaCha12Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x5F, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let mut aug_rng = ChaCha12Rng::seed_from_u64(mix_seed(&[cfg.seed, 0xA6, epoch as u64]));

        let mut loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let mut queries = Vec::with_capacity(batch.len());
            let mut refs = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let rec = &train_set.records()[i];
                let mut q = cache.get(train_set, &rec.distorted_path)?;
                let mut r = cache.get(train_set, &rec.reference_path)?;
                if cfg.augment {
                    let (fq, fr) = augment_flip(&q, &r, &mut aug_rng);
                    q = fq;
                    r = fr;
                }
                queries.push(q);
                refs.push(r);
                targets.push(rec.mos as f32);
            }
            let qb = Tensor::stack(&queries)?;
            let rb = Tensor::stack(&refs)?;
            let tb = Tensor::from_vec(Shape::vector(batch.len(), 1), targets)?;

            let mut g = Graph::<f32>::new();
            let bound = model.bind(&mut g);
            let qn = g.leaf(qb);
            let rn = g.leaf(rb);
            let tn = g.leaf(tb);
            let pred = model.forward(&mut g, &bound, qn, rn)?;
            let loss_node = g.mse(pred, tn)?;
            let loss = g.value(loss_node).data()[0] as f64;
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    epoch,
                    step: global_step,
                    loss,
                });
            }
            g.backward(loss_node)?;
            let grads: Vec<Option<Vec<f32>>> = bound
                .ids()
                .iter()
                .map(|&id| g.grad(id).map(|s| s.to_vec()))
                .collect();
            let lr = lr_schedule(global_step, total_steps, cfg)?;
            adam.step(model, &grads, lr)?;
            global_step += 1;
            loss_sum += loss;
        }
        let train_loss = loss_sum / batches_per_epoch as f64;

        let preds = predict_dataset(model, val_set, &mut cache, cfg.batch_size)?;
        let labels: Vec<f64> = val_set.records().iter().map(|r| r.mos).collect();
        let (val_srcc_abs, val_krcc_abs, val_degenerate) =
            match (metrics::srcc(&preds, &labels), metrics::krcc(&preds, &labels)) {
                (Ok(s), Ok(k)) => (s.abs(), k.abs(), false),
                _ => (0.0, 0.0, true),
            };

        if !val_degenerate {
            let better = match &best {
                None => true,
                Some((_, b, _)) => val_srcc_abs > *b,
            };
            if better {
                best = Some((epoch, val_srcc_abs, model.params().to_vec()));
            }
        }

        let wall_secs = t0.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.6}, val |SRCC| {val_srcc_abs:.4}, \
             val |KRCC| {val_krcc_abs:.4}, {wall_secs:.1}s"
        );
        stats.push(EpochStats {
            epoch,
            train_loss,
            val_srcc_abs,
            val_krcc_abs,
            val_degenerate,
            wall_secs,
        });
    }

    let (best_epoch, best_val_srcc_abs) = match best {
        Some((epoch, srcc, params)) => {
            for (dst, src) in model.params_mut().iter_mut().zip(params) {
                *dst = src;
            }
            (epoch, srcc)
        }
        None => (cfg.epochs - 1, 0.0),
    };
    Ok(TrainReport {
        epochs: stats,
        best_epoch,
        best_val_srcc_abs,
        checkpoint_path: None,
    })
}
