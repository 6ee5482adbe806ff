//! Command implementations. Each prints a machine-readable result on stdout
//! and returns a non-zero exit through `main` on failure.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::Serialize;

use triqa_core::data::{
    load_image, load_manifest, make_synthetic_benchmark, resize_bilinear, split, DistortionKind,
};
use triqa_core::model::{IqaModel, ModelConfig};
use triqa_core::train::{evaluate, write_predictions_csv, TrainConfig};

use crate::config::{experiment_hash, ExperimentConfig};

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("`{s}`: expected HxW, e.g. 96x96"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    Ok((h, w))
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for images/ and manifest.csv
    #[arg(long)]
    pub out: PathBuf,
    /// Number of procedural reference images (>= 2)
    #[arg(long)]
    pub refs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image size as HxW, divisible by 16
    #[arg(long, default_value = "96x96", value_parser = parse_size)]
    pub size: (usize, usize),
    /// Comma-separated distortion kinds; default: all four
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
}

pub fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let kinds: Vec<DistortionKind> = match &args.kinds {
        None => DistortionKind::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<_, _>>()?,
    };
    let dataset = make_synthetic_benchmark(&args.out, args.refs, &kinds, args.seed, args.size)?;
    #[derive(Serialize)]
    struct Out {
        manifest: String,
        records: usize,
        references: usize,
        kinds: Vec<String>,
    }
    print_json(&Out {
        manifest: args.out.join("manifest.csv").display().to_string(),
        records: dataset.len(),
        references: dataset.reference_groups().len(),
        kinds: kinds.iter().map(|k| k.to_string()).collect(),
    })
}

#[derive(Args)]
pub struct TrainArgs {
    /// Experiment config JSON
    #[arg(long)]
    pub config: PathBuf,
}

pub fn train(args: TrainArgs) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let dataset = load_manifest(&cfg.data.manifest)?;
    let (train_set, val_set) = split(&dataset, &cfg.data.split)?;
    log::info!(
        "split: {} train / {} val records ({} / {} references)",
        train_set.len(),
        val_set.len(),
        train_set.reference_groups().len(),
        val_set.reference_groups().len()
    );
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;

    let tcfg = cfg.train_config();
    let mut model = IqaModel::init(cfg.model.clone(), tcfg.seed)?;
    let mut report = triqa_core::train::train(&mut model, &train_set, &val_set, &tcfg)?;

    let checkpoint = cfg.output_dir.join("model.ckpt");
    model.save(&checkpoint)?;
    report.checkpoint_path = Some(checkpoint.display().to_string());

    let eval = evaluate(&model, &val_set, tcfg.image_size, tcfg.batch_size)?;
    let predictions = cfg.output_dir.join("predictions.csv");
    write_predictions_csv(&predictions, &eval.rows)?;
    report.save(&cfg.output_dir.join("report.json"))?;

    #[derive(Serialize)]
    struct Out {
        checkpoint: String,
        report: String,
        predictions: String,
        best_epoch: usize,
        val_srcc_abs: f64,
        val_krcc_abs: f64,
        n_val: usize,
    }
    print_json(&Out {
        checkpoint: checkpoint.display().to_string(),
        report: cfg.output_dir.join("report.json").display().to_string(),
        predictions: predictions.display().to_string(),
        best_epoch: report.best_epoch,
        val_srcc_abs: eval.srcc_abs,
        val_krcc_abs: eval.krcc_abs,
        n_val: eval.n,
    })
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint path (expects the `<path>.json` config sidecar next to it)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest CSV to evaluate
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for predictions.csv
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Evaluation resolution as HxW
    #[arg(long, default_value = "192x192", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
}

pub fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let model = IqaModel::load(&args.checkpoint)?;
    let dataset = load_manifest(&args.manifest)?;
    let report = evaluate(&model, &dataset, args.size, args.batch)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    write_predictions_csv(&args.out.join("predictions.csv"), &report.rows)?;
    #[derive(Serialize)]
    struct Out {
        srcc_abs: f64,
        krcc_abs: f64,
        n: usize,
    }
    print_json(&Out {
        srcc_abs: report.srcc_abs,
        krcc_abs: report.krcc_abs,
        n: report.n,
    })
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference image (PPM P6 or PNG)
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Distorted query image, same size as the reference
    #[arg(long)]
    pub query: PathBuf,
    /// Optional HxW resize applied to both images before scoring
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
}

pub fn predict(args: PredictArgs) -> anyhow::Result<()> {
    let model = IqaModel::load(&args.checkpoint)?;
    let mut query = load_image(&args.query)?;
    let mut reference = load_image(&args.reference)?;
    if let Some((h, w)) = args.size {
        query = resize_bilinear(&query, h, w);
        reference = resize_bilinear(&reference, h, w);
    }
    if query.shape() != reference.shape() {
        bail!(
            "query {} and reference {} differ in size ({} vs {})",
            args.query.display(),
            args.reference.display(),
            query.shape(),
            reference.shape()
        );
    }
    let scores = model.predict(&query, &reference)?;
    println!("{}", scores[0]);
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum Axis {
    /// The three branch combinations: FRP, FRP+FRNP, FRP+FRNP+NR
    Branches,
    /// Encoder width presets from the config's `ablate.backbones`
    Backbones,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Experiment config JSON (base configuration shared by all rows)
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub axis: Axis,
}

#[derive(Serialize)]
struct AblationRow {
    label: String,
    use_frp: bool,
    use_frnp: bool,
    use_nr: bool,
    model: ModelConfig,
    head_dim: usize,
    seeds: Vec<u64>,
    srcc_abs: Vec<f64>,
    krcc_abs: Vec<f64>,
    srcc_abs_mean: Option<f64>,
    krcc_abs_mean: Option<f64>,
    config_hash: String,
    error: Option<String>,
}

#[derive(Serialize)]
struct AblationReport {
    axis: String,
    split_seed: u64,
    seeds_per_row: usize,
    rows: Vec<AblationRow>,
}

pub fn ablate(args: AblateArgs) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let dataset = load_manifest(&cfg.data.manifest)?;
    // One shared split isolates the model variable across rows.
    let (train_set, val_set) = split(&dataset, &cfg.data.split)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;

    let variants: Vec<(String, ModelConfig)> = match args.axis {
        Axis::Branches => [
            ("frp", (true, false, false)),
            ("frp+frnp", (true, true, false)),
            ("frp+frnp+nr", (true, true, true)),
        ]
        .into_iter()
        .map(|(label, (frp, frnp, nr))| {
            let model = ModelConfig {
                use_frp: frp,
                use_frnp: frnp,
                use_nr: nr,
                ..cfg.model.clone()
            };
            (label.to_string(), model)
        })
        .collect(),
        Axis::Backbones => cfg
            .ablate
            .backbones
            .iter()
            .map(|preset| {
                let mut model = cfg.model.clone();
                model.frp_encoder.channels = preset.channels;
                model.frnp_encoder.channels = preset.channels;
                model.nr_encoder.channels = preset.channels;
                (preset.name.clone(), model)
            })
            .collect(),
    };

    let tcfg_base = cfg.train_config();
    let mut rows = Vec::with_capacity(variants.len());
    let mut failures = 0usize;
    for (label, model_cfg) in variants {
        let row_cfg = ExperimentConfig {
            model: model_cfg.clone(),
            ..cfg.clone()
        };
        let head_dim = model_cfg.head_input_dim();
        log::info!("ablate row `{label}`: head input dim {head_dim}");
        let mut row = AblationRow {
            label: label.clone(),
            use_frp: model_cfg.use_frp,
            use_frnp: model_cfg.use_frnp,
            use_nr: model_cfg.use_nr,
            model: model_cfg.clone(),
            head_dim,
            seeds: Vec::new(),
            srcc_abs: Vec::new(),
            krcc_abs: Vec::new(),
            srcc_abs_mean: None,
            krcc_abs_mean: None,
            config_hash: experiment_hash(&row_cfg),
            error: None,
        };
        for k in 0..cfg.ablate.seeds {
            let seed = tcfg_base.seed + k as u64;
            let run = (|| -> anyhow::Result<(f64, f64)> {
                let mut model = IqaModel::init(model_cfg.clone(), seed)?;
                let tcfg = TrainConfig {
                    seed,
                    ..tcfg_base.clone()
                };
                triqa_core::train::train(&mut model, &train_set, &val_set, &tcfg)?;
                let eval = evaluate(&model, &val_set, tcfg.image_size, tcfg.batch_size)?;
                Ok((eval.srcc_abs, eval.krcc_abs))
            })();
            match run {
                Ok((s, k_)) => {
                    row.seeds.push(seed);
                    row.srcc_abs.push(s);
                    row.krcc_abs.push(k_);
                    log::info!("ablate `{label}` seed {seed}: |SRCC| {s:.4}, |KRCC| {k_:.4}");
                }
                Err(e) => {
                    row.error = Some(format!("seed {seed}: {e:#}"));
                    failures += 1;
                    log::error!("ablate `{label}` seed {seed} failed: {e:#}");
                    break;
                }
            }
        }
        if row.error.is_none() && !row.srcc_abs.is_empty() {
            let n = row.srcc_abs.len() as f64;
            row.srcc_abs_mean = Some(row.srcc_abs.iter().sum::<f64>() / n);
            row.krcc_abs_mean = Some(row.krcc_abs.iter().sum::<f64>() / n);
        }
        rows.push(row);
    }

    let report = AblationReport {
        axis: match args.axis {
            Axis::Branches => "branches".into(),
            Axis::Backbones => "backbones".into(),
        },
        split_seed: cfg.data.split.seed,
        seeds_per_row: cfg.ablate.seeds,
        rows,
    };

    let json_path = cfg.output_dir.join("ablation.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("cannot write {}", json_path.display()))?;

    let csv_path = cfg.output_dir.join("ablation.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([
        "axis",
        "label",
        "use_frp",
        "use_frnp",
        "use_nr",
        "head_dim",
        "seeds",
        "srcc_abs_mean",
        "krcc_abs_mean",
        "srcc_abs_seeds",
        "krcc_abs_seeds",
        "config_hash",
        "error",
    ])?;
    let fmt_mean = |m: Option<f64>| m.map(|v| v.to_string()).unwrap_or_default();
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join("|")
    };
    for row in &report.rows {
        w.write_record([
            report.axis.as_str(),
            row.label.as_str(),
            &row.use_frp.to_string(),
            &row.use_frnp.to_string(),
            &row.use_nr.to_string(),
            &row.head_dim.to_string(),
            &row.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("|"),
            &fmt_mean(row.srcc_abs_mean),
            &fmt_mean(row.krcc_abs_mean),
            &join(&row.srcc_abs),
            &join(&row.krcc_abs),
            row.config_hash.as_str(),
            row.error.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;

    print_json(&report)?;
    if failures > 0 {
        bail!("{failures} ablation run(s) failed; see {}", json_path.display());
    }
    Ok(())
}
