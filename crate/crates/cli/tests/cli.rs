use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hsissl::{apply_override, load_config};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hsissl"));
    c.env("RUST_LOG", "warn");
    c
}

fn hsissl(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(out: Output) -> Output {
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// A config small enough that every stage takes well under a second.
fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = json!({
        "seed": 3,
        "scene": {"image": "data/scene.hdr", "labels": "data/labels.hdr"},
        "synth": {"classes": 3, "height": 16, "width": 16, "bands": 8, "seed": 5},
        "model": {
            "encoder": {"patch_size": 3, "widths": [4, 8], "embedding_dim": 8},
            "projector": {"hidden_dims": [8], "output_dim": 8}
        },
        "augment": [{"name": "flip"}, {"name": "gaussian_noise", "params": {"sigma": 0.05}}],
        "pretrain": {"epochs": 2, "batch_size": 32},
        "train": {"epochs": 3, "batch_size": 4},
        "shots": [2, 3],
        "seeds": [0, 1],
        "ablate": {"epochs": 1, "transforms": ["flip", "scaling", "band_drop"], "shots": 2},
        "checkpoint": "pre/encoder.ckpt"
    });
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn synth_into(dir: &Path, cfg: &Path) {
    ok(hsissl(&["synth", "--config", s(cfg), "--out", s(&dir.join("data"))]));
}

#[test]
fn override_sets_nested_keys() {
    let mut doc = json!({"pretrain": {"epochs": 3}});
    apply_override(&mut doc, "pretrain.epochs=7").unwrap();
    apply_override(&mut doc, "train.protocol=linear").unwrap();
    apply_override(&mut doc, "shots=[1,2]").unwrap();
    assert_eq!(doc["pretrain"]["epochs"], json!(7));
    assert_eq!(doc["train"]["protocol"], json!("linear"));
    assert_eq!(doc["shots"], json!([1, 2]));
    assert!(apply_override(&mut doc, "no_equals_sign").is_err());
    assert!(apply_override(&mut doc, "shots.inner=1").is_err());
}

#[test]
fn config_defaults_and_overrides() {
    let cfg = load_config(None, &["seeds=[4]".to_string(), "ablate.epochs=2".to_string()]).unwrap();
    assert_eq!(cfg.seeds, vec![4]);
    assert_eq!(cfg.ablate.epochs, 2);
    assert_eq!(cfg.ablate.transforms.len(), 9);
    assert!(load_config(None, &["seeds=[]".to_string()]).unwrap().validate().is_err());
    assert!(load_config(None, &["pretrain.epoch=2".to_string()]).is_err());
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    synth_into(dir.path(), &cfg);
    assert!(dir.path().join("data/scene.hdr").exists());
    assert!(dir.path().join("data/labels.hdr").exists());

    let pre = dir.path().join("pre");
    let no_ckpt = "checkpoint=null";
    ok(hsissl(&["pretrain", "--config", s(&cfg), "--set", no_ckpt, "--out", s(&pre)]));
    let loss = fs::read_to_string(pre.join("pretrain_loss.csv")).unwrap();
    let lines: Vec<&str> = loss.lines().collect();
    assert_eq!(lines[0], "epoch,mean_loss");
    assert_eq!(lines.len(), 3);
    assert!(pre.join("encoder.ckpt").exists());

    let cls = dir.path().join("cls");
    ok(hsissl(&["classify", "--config", s(&cfg), "--out", s(&cls)]));
    for p in ["supervised_baseline", "linear", "finetune"] {
        for k in [2, 3] {
            for seed in [0, 1] {
                let path = cls.join(format!("metrics_{p}_K{k}_seed{seed}.json"));
                let v: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
                assert_eq!(v["protocol"], json!(p));
                assert_eq!(v["n_train"], json!(3 * k));
                let oa = v["oa"].as_f64().unwrap();
                assert!((0.0..=1.0).contains(&oa));
            }
        }
    }

    let summary = fs::read_to_string(cls.join("summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], vec!["method", "metric", "K2", "K3"]);
    assert_eq!(rows.len(), 1 + 3 * 4);
    assert!(rows[1..].iter().all(|r| r.len() == 4));
    assert_eq!(&rows[1][..2], &["supervised_baseline", "oa_mean"]);
    assert_eq!(&rows[12][..2], &["finetune", "kappa_std"]);

    let ev = dir.path().join("ev");
    let ckpt = format!("checkpoint={}", s(&cls.join("classifier_linear_K2_seed0.ckpt")));
    ok(hsissl(&["eval", "--config", s(&cfg), "--set", &ckpt, "--out", s(&ev)]));
    let eval: Value =
        serde_json::from_str(&fs::read_to_string(ev.join("metrics_eval_K2_seed0.json")).unwrap()).unwrap();
    let trained: Value =
        serde_json::from_str(&fs::read_to_string(cls.join("metrics_linear_K2_seed0.json")).unwrap()).unwrap();
    // the restored classifier reproduces the metrics it was trained with
    assert_eq!(eval["confusion"], trained["confusion"]);
    let pgm = fs::read(ev.join("prediction_map.pgm")).unwrap();
    let header = b"P5\n16 16\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len(), header.len() + 256);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    synth_into(dir.path(), &cfg);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(hsissl(&["pretrain", "--config", s(&cfg), "--set", "checkpoint=null", "--out", s(&out)]));
        let ckpt = format!("checkpoint={}", s(&out.join("encoder.ckpt")));
        let cls = out.join("cls");
        ok(hsissl(&["classify", "--config", s(&cfg), "--set", &ckpt, "--set", "shots=[2]", "--out", s(&cls)]));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in [
        "pretrain_loss.csv",
        "encoder.ckpt",
        "cls/summary.csv",
        "cls/metrics_finetune_K2_seed1.json",
        "cls/classifier_linear_K2_seed0.ckpt",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ablation_matrix_is_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    synth_into(dir.path(), &cfg);
    let out = dir.path().join("abl");
    ok(hsissl(&["ablate", "--config", s(&cfg), "--set", "seeds=[0]", "--out", s(&out)]));
    let csv = fs::read_to_string(out.join("ablation_matrix.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], vec!["transform", "flip", "scaling", "band_drop"]);
    assert_eq!(rows.len(), 4);
    for i in 1..4 {
        assert_eq!(rows[i][0], rows[0][i]);
        for j in 1..4 {
            assert_eq!(rows[i][j], rows[j][i]);
            let v: f64 = rows[i][j].parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
    let base = fs::read_to_string(out.join("ablation_baseline.csv")).unwrap();
    assert!(base.starts_with("no_augmentation_oa\n"));
}

#[test]
fn missing_checkpoint_for_pretrained_protocols_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    synth_into(dir.path(), &cfg);
    let out = dir.path().join("cls");
    let r = hsissl(&["classify", "--config", s(&cfg), "--set", "checkpoint=null", "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    // the supervised baseline alone needs no checkpoint
    ok(hsissl(&[
        "classify", "--config", s(&cfg), "--set", "checkpoint=null",
        "--set", "protocols=[\"supervised_baseline\"]", "--set", "shots=[2]", "--out", s(&out),
    ]));
    // a checkpoint path that does not exist fails validation
    let r = hsissl(&["classify", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 2);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("o");
    assert_eq!(code(&hsissl(&["synth", "--config", s(&cfg), "--set", "synth.bogus=1", "--out", s(&out)])), 2);
    assert_eq!(code(&hsissl(&["synth", "--config", s(&dir.path().join("absent.json")), "--out", s(&out)])), 2);
    fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    assert_eq!(code(&hsissl(&["synth", "--config", s(&dir.path().join("broken.json")), "--out", s(&out)])), 2);

    synth_into(dir.path(), &cfg);
    // truncate the payload: a data-format error
    let raw = dir.path().join("data/scene.raw");
    let bytes = fs::read(&raw).unwrap();
    fs::write(&raw, &bytes[..bytes.len() / 2]).unwrap();
    let r = hsissl(&["pretrain", "--config", s(&cfg), "--set", "checkpoint=null", "--out", s(&out)]);
    assert_eq!(code(&r), 3, "stderr: {}", String::from_utf8_lossy(&r.stderr));
    fs::write(&raw, &bytes).unwrap();

    // an absurd learning rate blows the loss up: a numerical failure
    let r = hsissl(&[
        "pretrain", "--config", s(&cfg), "--set", "checkpoint=null",
        "--set", "pretrain.base_lr=1e30", "--set", "pretrain.bias_lr_scale=1",
        "--set", "pretrain.lars_trust_coefficient=1e6", "--set", "pretrain.epochs=20",
        "--out", s(&out),
    ]);
    assert_eq!(code(&r), 4, "stderr: {}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["synthetic.json", "paviau.json"] {
        let cfg = load_config(Some(&root.join(name)), &[]).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.scene.image.unwrap().is_absolute());
    }
}
