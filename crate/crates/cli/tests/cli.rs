//! End-to-end tests of the `triqa` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use triqa_core::data::{gen_reference, save_image};
use triqa_core::model::{EncoderConfig, IqaModel, ModelConfig};

fn triqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_triqa"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny_model_json() -> serde_json::Value {
    serde_json::json!({
        "frp_encoder": {"channels": [2, 3, 3, 4], "convs_per_block": 1},
        "frnp_encoder": {"channels": [2, 3, 3, 4], "convs_per_block": 1},
        "nr_encoder": {"channels": [2, 3, 3, 4], "convs_per_block": 1},
        "fc_dims": [8, 4]
    })
}

fn write_config(dir: &Path, manifest: &Path, out_dir: &Path, extra_train: serde_json::Value) -> PathBuf {
    let mut train = serde_json::json!({
        "lr_init": 1e-3,
        "lr_final": 1e-5,
        "batch_size": 4,
        "epochs": 2,
        "seed": 5
    });
    for (k, v) in extra_train.as_object().cloned().unwrap_or_default() {
        train[k] = v;
    }
    let cfg = serde_json::json!({
        "model": tiny_model_json(),
        "train": train,
        "data": {
            "manifest": manifest.display().to_string(),
            "split": {"train_fraction": 0.8, "seed": 1, "group_by_reference": true},
            "image_size": [32, 32]
        },
        "output_dir": out_dir.display().to_string(),
        "ablate": {"seeds": 1}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn synth_benchmark(dir: &Path, refs: usize) -> PathBuf {
    let out = triqa(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--refs",
        &refs.to_string(),
        "--seed",
        "7",
        "--size",
        "32x32",
    ]);
    assert!(out.status.success(), "{}", stderr_str(&out));
    dir.join("manifest.csv")
}

#[test]
fn synth_product_count_and_reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d1 = tmp.path().join("a");
    let d2 = tmp.path().join("b");
    for d in [&d1, &d2] {
        let out = triqa(&[
            "synth",
            "--out",
            d.to_str().unwrap(),
            "--refs",
            "4",
            "--seed",
            "7",
            "--size",
            "32x32",
        ]);
        assert!(out.status.success(), "{}", stderr_str(&out));
        let v: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
        assert_eq!(v["records"], 80); // 4 refs x 4 kinds x 5 severities
        assert_eq!(v["references"], 4);
    }
    assert_eq!(
        std::fs::read(d1.join("manifest.csv")).unwrap(),
        std::fs::read(d2.join("manifest.csv")).unwrap()
    );
    let img = "images/ref001_gaussian_blur_s3.ppm";
    assert_eq!(
        std::fs::read(d1.join(img)).unwrap(),
        std::fs::read(d2.join(img)).unwrap()
    );
}

#[test]
fn synth_unwritable_dir_fails_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    let out = triqa(&[
        "synth",
        "--out",
        file.join("sub").to_str().unwrap(),
        "--refs",
        "2",
        "--seed",
        "0",
    ]);
    assert!(!out.status.success());
    assert!(stderr_str(&out).contains("error"), "{}", stderr_str(&out));
}

#[test]
fn train_writes_all_three_artifacts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    let manifest = synth_benchmark(&bench, 3);

    let run = |out_name: &str| -> serde_json::Value {
        let out_dir = tmp.path().join(out_name);
        let cfg = write_config(&tmp.path().join("."), &manifest, &out_dir, serde_json::json!({}));
        let out = triqa(&["train", "--config", cfg.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr_str(&out));
        assert!(out_dir.join("model.ckpt").is_file());
        assert!(out_dir.join("model.ckpt.json").is_file());
        assert!(out_dir.join("report.json").is_file());
        assert!(out_dir.join("predictions.csv").is_file());
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap()
    };
    let r1 = run("run1");
    let r2 = run("run2");
    let losses = |r: &serde_json::Value| -> Vec<f64> {
        r["epochs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["train_loss"].as_f64().unwrap())
            .collect()
    };
    let (l1, l2) = (losses(&r1), losses(&r2));
    assert_eq!(l1.len(), 2);
    for (a, b) in l1.iter().zip(&l2) {
        assert_eq!(a.to_bits(), b.to_bits(), "loss trajectories differ");
    }
}

#[test]
fn train_invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    let manifest = synth_benchmark(&bench, 3);
    let cfg = write_config(
        tmp.path(),
        &manifest,
        &tmp.path().join("out"),
        serde_json::json!({"lr_final": 1.0}),
    );
    let out = triqa(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(
        stderr_str(&out).contains("train.lr_final"),
        "{}",
        stderr_str(&out)
    );
}

#[test]
fn eval_prints_exactly_three_keys_and_writes_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    let manifest = synth_benchmark(&bench, 3);
    let out_dir = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &manifest, &out_dir, serde_json::json!({"epochs": 1}));
    let out = triqa(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr_str(&out));

    let eval_dir = tmp.path().join("evalout");
    let out = triqa(&[
        "eval",
        "--checkpoint",
        out_dir.join("model.ckpt").to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--size",
        "32x32",
    ]);
    assert!(out.status.success(), "{}", stderr_str(&out));
    let v: serde_json::Value = serde_json::from_str(stdout_str(&out).trim()).unwrap();
    let obj = v.as_object().unwrap();
    assert_eq!(obj.len(), 3);
    for key in ["srcc_abs", "krcc_abs", "n"] {
        assert!(obj.contains_key(key), "missing {key}");
    }
    assert_eq!(v["n"], 60);
    assert!(eval_dir.join("predictions.csv").is_file());
}

#[test]
fn eval_empty_manifest_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("empty.csv");
    std::fs::write(&manifest, "ref_path,dist_path,mos\n").unwrap();
    // Any checkpoint will do; build one directly.
    let enc = EncoderConfig {
        channels: [2, 2, 2, 2],
        convs_per_block: 1,
        kernel: 3,
    };
    let model = IqaModel::init(
        ModelConfig {
            frp_encoder: enc.clone(),
            frnp_encoder: enc.clone(),
            nr_encoder: enc,
            fc_dims: [4, 2],
            ..Default::default()
        },
        0,
    )
    .unwrap();
    let ckpt = tmp.path().join("m.ckpt");
    model.save(&ckpt).unwrap();
    let out = triqa(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--size",
        "32x32",
    ]);
    assert!(!out.status.success());
    assert!(stderr_str(&out).contains("empty"), "{}", stderr_str(&out));
}

#[test]
fn predict_identical_pair_is_constant_for_fr_only_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let enc = EncoderConfig {
        channels: [2, 3, 3, 4],
        convs_per_block: 1,
        kernel: 3,
    };
    let model = IqaModel::init(
        ModelConfig {
            use_nr: false,
            frp_encoder: enc.clone(),
            frnp_encoder: enc.clone(),
            nr_encoder: enc,
            fc_dims: [8, 4],
            ..Default::default()
        },
        3,
    )
    .unwrap();
    let ckpt = tmp.path().join("fr.ckpt");
    model.save(&ckpt).unwrap();

    let img_a = tmp.path().join("a.ppm");
    let img_b = tmp.path().join("b.ppm");
    save_image(&img_a, &gen_reference(0, 1, 32, 32)).unwrap();
    save_image(&img_b, &gen_reference(1, 1, 32, 32)).unwrap();

    let score = |img: &Path| -> String {
        let out = triqa(&[
            "predict",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--ref",
            img.to_str().unwrap(),
            "--query",
            img.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr_str(&out));
        stdout_str(&out).trim().to_string()
    };
    let sa = score(&img_a);
    let sb = score(&img_b);
    assert_eq!(sa, sb, "identical pairs must collapse to the head bias value");
    sa.parse::<f64>().unwrap();
}

#[test]
fn predict_mismatched_sizes_fails_with_shape_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let enc = EncoderConfig {
        channels: [2, 2, 2, 2],
        convs_per_block: 1,
        kernel: 3,
    };
    let model = IqaModel::init(
        ModelConfig {
            frp_encoder: enc.clone(),
            frnp_encoder: enc.clone(),
            nr_encoder: enc,
            fc_dims: [4, 2],
            ..Default::default()
        },
        0,
    )
    .unwrap();
    let ckpt = tmp.path().join("m.ckpt");
    model.save(&ckpt).unwrap();
    let img_a = tmp.path().join("a.ppm");
    let img_b = tmp.path().join("b.ppm");
    save_image(&img_a, &gen_reference(0, 1, 32, 32)).unwrap();
    save_image(&img_b, &gen_reference(1, 1, 48, 48)).unwrap();
    let out = triqa(&[
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--ref",
        img_a.to_str().unwrap(),
        "--query",
        img_b.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = stderr_str(&out);
    assert!(err.contains("1x3x48x48") && err.contains("1x3x32x32"), "{err}");
}

#[test]
fn predict_orders_extreme_severities_under_a_trained_model() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    let out = triqa(&[
        "synth",
        "--out",
        bench.to_str().unwrap(),
        "--refs",
        "2",
        "--seed",
        "3",
        "--size",
        "32x32",
        "--kinds",
        "gaussian_blur",
    ]);
    assert!(out.status.success(), "{}", stderr_str(&out));

    // Overfit a small model in-process, then score through the binary.
    let ds = triqa_core::data::load_manifest(&bench.join("manifest.csv")).unwrap();
    let enc = EncoderConfig {
        channels: [4, 8, 12, 16],
        convs_per_block: 1,
        kernel: 3,
    };
    let mut model = IqaModel::init(
        ModelConfig {
            frp_encoder: enc.clone(),
            frnp_encoder: enc.clone(),
            nr_encoder: enc,
            fc_dims: [32, 16],
            ..Default::default()
        },
        0,
    )
    .unwrap();
    let cfg = triqa_core::train::TrainConfig {
        lr_init: 1e-2,
        lr_final: 1e-4,
        batch_size: 8,
        epochs: 150,
        seed: 0,
        augment: false,
        image_size: (32, 32),
    };
    triqa_core::train::train(&mut model, &ds, &ds, &cfg).unwrap();
    let ckpt = tmp.path().join("trained.ckpt");
    model.save(&ckpt).unwrap();

    let score = |severity: u8| -> f64 {
        let out = triqa(&[
            "predict",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--ref",
            bench.join("images/ref000.ppm").to_str().unwrap(),
            "--query",
            bench
                .join(format!("images/ref000_gaussian_blur_s{severity}.ppm"))
                .to_str()
                .unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr_str(&out));
        stdout_str(&out).trim().parse().unwrap()
    };
    let mild = score(1);
    let severe = score(5);
    assert!(
        mild > severe,
        "severity 1 should score higher than severity 5 ({mild} vs {severe})"
    );
}

#[test]
fn ablate_branches_has_three_rows_with_reproducible_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    let manifest = synth_benchmark(&bench, 3);

    let run = |out_name: &str| -> serde_json::Value {
        let out_dir = tmp.path().join(out_name);
        let cfg = write_config(
            &tmp.path().join("."),
            &manifest,
            &out_dir,
            serde_json::json!({"epochs": 1}),
        );
        let out = triqa(&["ablate", "--config", cfg.to_str().unwrap(), "--axis", "branches"]);
        assert!(out.status.success(), "{}", stderr_str(&out));
        assert!(out_dir.join("ablation.csv").is_file());
        serde_json::from_str(
            &std::fs::read_to_string(out_dir.join("ablation.json")).unwrap(),
        )
        .unwrap()
    };
    let r1 = run("ab1");
    let rows = r1["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["label"], "frp");
    assert_eq!(rows[2]["label"], "frp+frnp+nr");
    // Head dims shrink with disabled branches: 12 / 24 / 36 for channels
    // (2, 3, 3, 4).
    assert_eq!(rows[0]["head_dim"], 12);
    assert_eq!(rows[1]["head_dim"], 24);
    assert_eq!(rows[2]["head_dim"], 36);
    for row in rows {
        assert!(row["error"].is_null(), "{row}");
    }

    let r2 = run("ab2");
    for (a, b) in rows.iter().zip(r2["rows"].as_array().unwrap()) {
        assert_eq!(a["config_hash"], b["config_hash"]);
        assert_eq!(a["srcc_abs"], b["srcc_abs"]);
    }
}

#[test]
fn ablate_backbones_uses_config_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    let manifest = synth_benchmark(&bench, 3);
    let out_dir = tmp.path().join("out");
    let mut cfg: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(write_config(
            tmp.path(),
            &manifest,
            &out_dir,
            serde_json::json!({"epochs": 1}),
        ))
        .unwrap(),
    )
    .unwrap();
    cfg["ablate"] = serde_json::json!({
        "seeds": 1,
        "backbones": [
            {"name": "tiny", "channels": [2, 2, 2, 2]},
            {"name": "wide", "channels": [3, 4, 4, 6]}
        ]
    });
    let cfg_path = tmp.path().join("bb.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out = triqa(&["ablate", "--config", cfg_path.to_str().unwrap(), "--axis", "backbones"]);
    assert!(out.status.success(), "{}", stderr_str(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("ablation.json")).unwrap())
            .unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["label"], "tiny");
    assert_eq!(rows[0]["head_dim"], 24); // 3 branches x (2+2+2+2)
    assert_eq!(rows[1]["label"], "wide");
    assert_eq!(rows[1]["head_dim"], 51); // 3 branches x (3+4+4+6)
}
