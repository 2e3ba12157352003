use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hsissl_core::classify::{
    evaluate, evaluate_model, predict_scene, train_classifier, write_pgm, MetricsReport, Protocol,
    TrainConfig,
};
use hsissl_core::data::{
    generate_synthetic_scene, load_scene_with_labels, normalize_per_band, sample_few_shot,
    write_label_map, write_scene, LabelMap, Scene,
};
use hsissl_core::models::{build_encoder, load_checkpoint, save_checkpoint, EncoderConfig, Model};
use hsissl_core::ssl::{pretrain, write_loss_history, BarlowTwinsConfig, ViewSetup};
use hsissl_core::views::AugmentationSpec;

use crate::config::RunConfig;
use crate::CliError;

pub const ENCODER_CHECKPOINT: &str = "encoder.ckpt";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(hsissl_core::Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn load_data(cfg: &RunConfig, need_labels: bool) -> Result<(Scene, Option<LabelMap>), CliError> {
    let image = cfg
        .scene
        .image
        .as_deref()
        .ok_or_else(|| CliError::Config("scene.image is not set".into()))?;
    if need_labels && cfg.scene.labels.is_none() {
        return Err(CliError::Config("scene.labels is not set".into()));
    }
    let (scene, labels) = load_scene_with_labels(image, cfg.scene.labels.as_deref())?;
    log::info!(
        "scene {}x{}x{} from {}",
        scene.height(),
        scene.width(),
        scene.bands(),
        image.display()
    );
    let scene = if cfg.scene.normalize {
        normalize_per_band(&scene).scene
    } else {
        scene
    };
    Ok((scene, labels))
}

fn encoder_for(cfg: &RunConfig, scene: &Scene) -> Result<EncoderConfig, CliError> {
    let mut enc = cfg.model.encoder.clone();
    if enc.input_bands == 0 {
        enc.input_bands = scene.bands();
    }
    enc.validate()?;
    Ok(enc)
}

fn fresh_model(cfg: &RunConfig, enc: &EncoderConfig, seed: u64) -> Result<Model, CliError> {
    let mut model = build_encoder(enc, seed)?;
    model.attach_projector(&cfg.model.projector, seed)?;
    Ok(model)
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (scene, labels) = generate_synthetic_scene(&cfg.synth)?;
    write_scene(&scene, &out.join("scene.hdr"))?;
    write_label_map(&labels, &out.join("labels.hdr"))?;
    println!(
        "synthetic scene {}x{} with {} bands and {} classes (seed {})",
        scene.height(),
        scene.width(),
        scene.bands(),
        labels.num_classes(),
        cfg.synth.seed
    );
    for (i, n) in labels.class_counts().iter().enumerate().skip(1) {
        println!("  class {i}: {n} pixels");
    }
    println!("wrote {} and {}", out.join("scene.hdr").display(), out.join("labels.hdr").display());
    Ok(())
}

pub fn pretrain_cmd(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (scene, _) = load_data(cfg, false)?;
    let enc = encoder_for(cfg, &scene)?;
    let mut model = fresh_model(cfg, &enc, cfg.seed)?;
    let ckpt = out.join(ENCODER_CHECKPOINT);
    let report = pretrain(&scene, &mut model, &cfg.views(), &cfg.pretrain, cfg.seed, Some(&ckpt))?;
    write_loss_history(&out.join("pretrain_loss.csv"), &report.loss_history)?;
    if let Some(last) = report.loss_history.last() {
        println!("pre-trained {} steps, final loss {last:.6}", report.steps);
    }
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn metrics_name(protocol: &str, k: usize, seed: u64) -> String {
    format!("metrics_{protocol}_K{k}_seed{seed}.json")
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Rows are `method x metric`, columns the shot counts; cells aggregate
/// over seeds (sample standard deviation).
pub fn summary_csv(shots: &[usize], protocols: &[Protocol], reports: &[(Protocol, usize, MetricsReport)]) -> String {
    let mut out = String::from("method,metric");
    for k in shots {
        let _ = write!(out, ",K{k}");
    }
    out.push('\n');
    type Getter = fn(&MetricsReport) -> f64;
    let metrics: [(&str, Getter); 2] = [("oa", |r| r.oa), ("kappa", |r| r.kappa)];
    for &p in protocols {
        for (name, get) in metrics {
            for stat in ["mean", "std"] {
                let _ = write!(out, "{},{name}_{stat}", p.as_str());
                for &k in shots {
                    let vals: Vec<f64> = reports
                        .iter()
                        .filter(|(q, kk, _)| *q == p && *kk == k)
                        .map(|(_, _, r)| get(r))
                        .collect();
                    let (m, s) = mean_std(&vals);
                    let _ = write!(out, ",{:.6}", if stat == "mean" { m } else { s });
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn classify(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (scene, labels) = load_data(cfg, true)?;
    let labels = labels.expect("labels requested");
    let needs_ckpt = cfg.protocols.iter().any(|p| p.needs_pretrained());
    let base = match (&cfg.checkpoint, needs_ckpt) {
        (Some(path), _) => load_checkpoint(path)?,
        (None, true) => {
            return Err(CliError::Config(
                "linear and finetune protocols need a pre-trained checkpoint".into(),
            ))
        }
        (None, false) => build_encoder(&encoder_for(cfg, &scene)?, cfg.seed)?,
    };
    let mut reports = Vec::new();
    for &k in &cfg.shots {
        for &seed in &cfg.seeds {
            let split = sample_few_shot(&labels, k, seed)?;
            for &protocol in &cfg.protocols {
                let tc = TrainConfig {
                    protocol,
                    seed,
                    ..cfg.train.clone()
                };
                let clf = train_classifier(&base, &scene, &split, &tc)?;
                let report = evaluate(&clf, &scene, &split)?;
                log::info!(
                    "{} K={k} seed={seed}: OA {:.4} kappa {:.4}",
                    protocol.as_str(),
                    report.oa,
                    report.kappa
                );
                report.write_json(&out.join(metrics_name(protocol.as_str(), k, seed)))?;
                save_checkpoint(
                    &clf.model,
                    &out.join(format!("classifier_{}_K{k}_seed{seed}.ckpt", protocol.as_str())),
                )?;
                reports.push((protocol, k, report));
            }
        }
    }
    let summary = summary_csv(&cfg.shots, &cfg.protocols, &reports);
    write_text(&out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn linear_oa(cfg: &RunConfig, model: &Model, scene: &Scene, labels: &LabelMap) -> Result<f64, CliError> {
    let mut total = 0.0;
    for &seed in &cfg.seeds {
        let split = sample_few_shot(labels, cfg.ablate.shots, seed)?;
        let tc = TrainConfig {
            protocol: Protocol::Linear,
            seed,
            ..cfg.train.clone()
        };
        let clf = train_classifier(model, scene, &split, &tc)?;
        total += evaluate(&clf, scene, &split)?.oa;
    }
    Ok(total / cfg.seeds.len() as f64)
}

fn ablation_cell(
    cfg: &RunConfig,
    scene: &Scene,
    labels: &LabelMap,
    enc: &EncoderConfig,
    names: &[&str],
) -> Result<f64, CliError> {
    let spec = AugmentationSpec::from_names(names, cfg.ablate.probability)?;
    let views = ViewSetup::symmetric(cfg.pairs.clone(), spec);
    let bt = BarlowTwinsConfig {
        epochs: cfg.ablate.epochs,
        ..cfg.pretrain.clone()
    };
    let mut model = fresh_model(cfg, enc, cfg.seed)?;
    pretrain(scene, &mut model, &views, &bt, cfg.seed, None)?;
    let oa = linear_oa(cfg, &model, scene, labels)?;
    log::info!("ablation {names:?}: OA {oa:.4}");
    Ok(oa)
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (scene, labels) = load_data(cfg, true)?;
    let labels = labels.expect("labels requested");
    let enc = encoder_for(cfg, &scene)?;
    let names: Vec<&str> = cfg.ablate.transforms.iter().map(String::as_str).collect();
    let n = names.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let pair: Vec<&str> = if i == j { vec![names[i]] } else { vec![names[i], names[j]] };
            let oa = ablation_cell(cfg, &scene, &labels, &enc, &pair)?;
            matrix[i][j] = oa;
            matrix[j][i] = oa;
        }
    }
    let baseline = ablation_cell(cfg, &scene, &labels, &enc, &[])?;

    let mut csv = String::from("transform");
    for name in &names {
        let _ = write!(csv, ",{name}");
    }
    csv.push('\n');
    for (name, row) in names.iter().zip(&matrix) {
        csv.push_str(name);
        for v in row {
            let _ = write!(csv, ",{v:.6}");
        }
        csv.push('\n');
    }
    write_text(&out.join("ablation_matrix.csv"), &csv)?;
    write_text(
        &out.join("ablation_baseline.csv"),
        &format!("no_augmentation_oa\n{baseline:.6}\n"),
    )?;
    print!("{csv}");
    println!("no augmentation: {baseline:.6}");
    Ok(())
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Config("eval needs a classifier checkpoint".into()))?;
    let model = load_checkpoint(path)?;
    if model.num_classes().is_none() {
        return Err(CliError::Config(format!(
            "{} has no classification head",
            path.display()
        )));
    }
    let (scene, labels) = load_data(cfg, true)?;
    let labels = labels.expect("labels requested");
    let (k, seed) = (cfg.shots[0], cfg.seeds[0]);
    let split = sample_few_shot(&labels, k, seed)?;
    let report = evaluate_model(&model, &scene, &split, split.train.len(), seed, "eval")?;
    report.write_json(&out.join(metrics_name("eval", k, seed)))?;
    let map = predict_scene(&model, &scene)?;
    write_pgm(
        &out.join("prediction_map.pgm"),
        scene.height(),
        scene.width(),
        &map,
        labels.num_classes(),
    )?;
    println!("OA {:.4} kappa {:.4} on {} test pixels", report.oa, report.kappa, report.n_test);
    Ok(())
}
