use super::*;
use crate::data::{generate_synthetic_scene, normalize_per_band, SynthConfig};
use crate::models::{build_encoder, EncoderConfig, EncoderKind, Group, Model, Param, ProjectionHeadConfig};
use crate::rng::rng_for;
use crate::views::{AugmentationSpec, PairMode, PairSamplingPolicy};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use rand::Rng as _;

fn random_matrix(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn t64(data: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
    Tensor::new(data, shape).unwrap()
}

// Pearson correlation by direct summation.
fn naive_correlation(a: &[f64], b: &[f64], n: usize, d: usize, centered: bool) -> Vec<f64> {
    let col = |m: &[f64], j: usize| -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|i| m[i * d + j]).collect();
        if centered {
            let mu = v.iter().sum::<f64>() / n as f64;
            v.iter().map(|x| x - mu).collect()
        } else {
            v
        }
    };
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        let x = col(a, i);
        let nx = (x.iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt();
        for j in 0..d {
            let y = col(b, j);
            let ny = (y.iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt();
            let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
            out[i * d + j] = dot / (nx * ny);
        }
    }
    out
}

#[test]
fn correlation_matches_naive_oracle() {
    let mut rng = rng_for(1, "cc");
    for case in 0..100 {
        let n = rng.random_range(2..20);
        let d = rng.random_range(1..12);
        let a = random_matrix(n, d, &mut rng);
        let b = random_matrix(n, d, &mut rng);
        let centered = case % 4 != 0;
        let c = cross_correlation(&t64(a.clone(), &[n, d]), &t64(b.clone(), &[n, d]), centered)
            .unwrap();
        let oracle = naive_correlation(&a, &b, n, d, centered);
        for (x, y) in c.data().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-10, "case {case}: {x} vs {y}");
        }
        assert!(c.data().iter().all(|v| v.abs() <= 1.0 + 1e-6));

        let ct = cross_correlation(&t64(b, &[n, d]), &t64(a, &[n, d]), centered).unwrap();
        for i in 0..d {
            for j in 0..d {
                assert_eq!(c.data()[i * d + j], ct.data()[j * d + i]);
            }
        }
    }
}

#[test]
fn self_and_negated_correlation() {
    let mut rng = rng_for(2, "cc");
    let a = random_matrix(10, 5, &mut rng);
    let za = t64(a.clone(), &[10, 5]);
    let c = cross_correlation(&za, &za, true).unwrap();
    let neg = t64(a.iter().map(|v| -v).collect(), &[10, 5]);
    let cn = cross_correlation(&za, &neg, true).unwrap();
    for i in 0..5 {
        assert!((c.data()[i * 5 + i] - 1.0).abs() < 1e-12);
        assert!((cn.data()[i * 5 + i] + 1.0).abs() < 1e-12);
    }
}

#[test]
fn correlation_invariances() {
    let mut rng = rng_for(3, "cc");
    let (n, d) = (12, 4);
    let a = random_matrix(n, d, &mut rng);
    let b = random_matrix(n, d, &mut rng);
    let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let scale: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..10.0)).collect();
    let shifted: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + shift[i % d]).collect();
    let scaled: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * scale[i % d]).collect();
    let base = cross_correlation(&t64(a, &[n, d]), &t64(b.clone(), &[n, d]), true).unwrap();
    for other in [shifted, scaled] {
        let c = cross_correlation(&t64(other, &[n, d]), &t64(b.clone(), &[n, d]), true).unwrap();
        for (x, y) in c.data().iter().zip(base.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn correlation_rejects_bad_inputs() {
    let a = t64(vec![1.0, 2.0], &[1, 2]);
    assert!(matches!(cross_correlation(&a, &a, true), Err(Error::DegenerateBatch(_))));
    let b = t64(vec![1.0; 6], &[3, 2]);
    let c = t64(vec![1.0; 6], &[2, 3]);
    assert!(matches!(cross_correlation(&b, &c, true), Err(Error::Dimension(_))));
    // constant columns stay finite thanks to the guard
    let cc = cross_correlation(&b, &b, true).unwrap();
    assert!(cc.data().iter().all(|v| v.is_finite()));
}

#[test]
fn loss_examples() {
    let eye = t64(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
    assert_eq!(barlow_twins_loss(&eye, 0.005).unwrap().item().unwrap(), 0.0);
    let zeros = t64(vec![0.0; 16], &[4, 4]);
    assert!((barlow_twins_loss(&zeros, 0.005).unwrap().item().unwrap() - 4.0).abs() < 1e-12);
    let ones = t64(vec![1.0; 16], &[4, 4]);
    assert!((barlow_twins_loss(&ones, 0.005).unwrap().item().unwrap() - 0.06).abs() < 1e-12);
    assert!(barlow_twins_loss(&t64(vec![1.0; 6], &[2, 3]), 0.005).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn loss_positive_away_from_identity(d in 1usize..6, seed in 0u64..10_000, lam in 1e-4f64..1.0) {
        let mut rng = rng_for(seed, "loss");
        let mut c: Vec<f64> = (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect();
        let k = rng.random_range(0..d * d);
        c[k] += rng.random_range(1e-3..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let l = barlow_twins_loss(&t64(c, &[d, d]), lam).unwrap().item().unwrap();
        prop_assert!(l > 0.0);
    }
}

fn fd_check(f: &dyn Fn(&Tensor<f64>) -> Tensor<f64>, x0: &[f64], shape: &[usize]) {
    let x = Tensor::parameter(x0.to_vec(), shape).unwrap();
    f(&x).backward().unwrap();
    let analytic = x.grad().unwrap();
    let h = 1e-5;
    let numeric: Vec<f64> = (0..x0.len())
        .map(|i| {
            let mut p = x0.to_vec();
            let mut m = x0.to_vec();
            p[i] += h;
            m[i] -= h;
            let fp = f(&t64(p, shape)).item().unwrap();
            let fm = f(&t64(m, shape)).item().unwrap();
            (fp - fm) / (2.0 * h)
        })
        .collect();
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
    assert!(diff / scale < 1e-4, "relative error {}", diff / scale);
}

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in 0..5 {
        let mut rng = rng_for(seed, "fd");
        let (n, d) = (8, 4);
        let a = random_matrix(n, d, &mut rng);
        let b = random_matrix(n, d, &mut rng);
        let zb = t64(b.clone(), &[n, d]);
        for centered in [true, false] {
            let f = |za: &Tensor<f64>| {
                barlow_twins_loss(&cross_correlation(za, &zb, centered).unwrap(), 0.3).unwrap()
            };
            fd_check(&f, &a, &[n, d]);
        }
        let za = t64(a.clone(), &[n, d]);
        let f = |zb: &Tensor<f64>| {
            barlow_twins_loss(&cross_correlation(&za, zb, true).unwrap(), 0.005).unwrap()
        };
        fd_check(&f, &b, &[n, d]);
        let c0 = random_matrix(d, d, &mut rng);
        fd_check(&|c: &Tensor<f64>| barlow_twins_loss(c, 0.7).unwrap(), &c0, &[d, d]);
    }
}

#[test]
fn off_diagonal_mean() {
    let c = t64(vec![1.0, -0.5, 0.25, 1.0], &[2, 2]);
    assert!((mean_abs_off_diagonal(&c) - 0.375).abs() < 1e-15);
}

#[test]
fn lars_local_lr_example() {
    assert!((lars_local_lr(2.0, 1.0, 0.0, 0.001, 0.0) - 0.002).abs() < 1e-15);
    assert_eq!(lars_local_lr(0.0, 1.0, 0.0, 0.001, 1e-8), 1.0);
    assert_eq!(lars_local_lr(1.0, 0.0, 0.0, 0.001, 1e-8), 1.0);
}

fn scalar_param(value: Vec<f32>, is_weight: bool) -> Param {
    Param {
        name: "w".into(),
        shape: vec![value.len()],
        value,
        group: Group::Encoder,
        is_weight,
    }
}


#[test]
fn lars_zero_gradient_is_noop() {
    let config = BarlowTwinsConfig {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut lars = Lars::new(&config);
    let mut params = vec![scalar_param(vec![1.0, -2.0], true), scalar_param(vec![0.5], false)];
    let before = params.clone();
    for _ in 0..5 {
        lars.step(&mut params, &[Some(vec![0.0, 0.0]), Some(vec![0.0])], 1.0).unwrap();
    }
    assert_eq!(params, before);
}

#[test]
fn lars_single_step_matches_formula() {
    let config = BarlowTwinsConfig {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut lars = Lars::new(&config);
    let mut params = vec![scalar_param(vec![2.0], true)];
    lars.step(&mut params, &[Some(vec![1.0])], 1.0).unwrap();
    // local lr 0.001 * 2 / (1 + 1e-8)
    assert!((params[0].value[0] - (2.0 - 0.002)).abs() < 1e-6);
}

#[test]
fn lars_rejects_nan_gradients() {
    let mut lars = Lars::new(&BarlowTwinsConfig::default());
    let mut params = vec![scalar_param(vec![1.0], true)];
    let err = lars.step(&mut params, &[Some(vec![f32::NAN])], 0.1).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)));
    assert_eq!(params[0].value, vec![1.0]);
}

#[test]
fn lars_descends_a_quadratic() {
    // f(w) = sum a_i (w_i - 1)^2
    let a = [1.0f32, 3.0, 0.5, 2.0];
    let f = |w: &[f32]| w.iter().zip(&a).map(|(x, k)| k * (x - 1.0) * (x - 1.0)).sum::<f32>();
    let config = BarlowTwinsConfig {
        weight_decay: 0.0,
        lars_trust_coefficient: 0.01,
        ..Default::default()
    };
    let mut lars = Lars::new(&config);
    let mut params = vec![scalar_param(vec![5.0, -4.0, 8.0, 3.0], true)];
    let (total, warmup) = (20, 3);
    let mut values = vec![f(&params[0].value)];
    for step in 0..total {
        let g: Vec<f32> = params[0].value.iter().zip(&a).map(|(x, k)| 2.0 * k * (x - 1.0)).collect();
        let lr = learning_rate_at(step, total, warmup, 1.0);
        lars.step(&mut params, &[Some(g)], lr).unwrap();
        values.push(f(&params[0].value));
    }
    for w in values[warmup..].windows(2) {
        assert!(w[1] < w[0], "{values:?}");
    }
}

#[test]
fn learning_rate_schedule() {
    assert!((learning_rate_at(0, 100, 10, 1.0) - 0.1).abs() < 1e-12);
    assert!((learning_rate_at(9, 100, 10, 1.0) - 1.0).abs() < 1e-12);
    assert!((learning_rate_at(10, 100, 10, 1.0) - 1.0).abs() < 1e-12);
    assert!((learning_rate_at(55, 100, 10, 1.0) - 0.5).abs() < 1e-12);
    assert!(learning_rate_at(99, 100, 10, 1.0) < 1e-3);
    assert!((learning_rate_at(0, 10, 0, 2.0) - 2.0).abs() < 1e-12);
}

#[test]
fn config_validation() {
    assert!(BarlowTwinsConfig::default().validate().is_ok());
    for bad in [
        BarlowTwinsConfig { lambda: 0.0, ..Default::default() },
        BarlowTwinsConfig { batch_size: 1, ..Default::default() },
        BarlowTwinsConfig { momentum: 1.0, ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

fn tiny_setup(seed: u64) -> (crate::data::Scene, Model, ViewSetup) {
    let scene = generate_synthetic_scene(&SynthConfig {
        classes: 3,
        height: 10,
        width: 10,
        bands: 8,
        blob_scale: 2.0,
        seed,
        ..Default::default()
    })
    .unwrap()
    .0;
    let scene = normalize_per_band(&scene).scene;
    let enc = EncoderConfig {
        kind: EncoderKind::Conv2d,
        input_bands: 8,
        patch_size: 3,
        widths: vec![4, 4],
        embedding_dim: 4,
        kernel_size: 3,
    };
    let mut model = build_encoder(&enc, seed).unwrap();
    model
        .attach_projector(&ProjectionHeadConfig { hidden_dims: vec![8], output_dim: 6 }, seed)
        .unwrap();
    let views = ViewSetup::symmetric(
        PairSamplingPolicy::default(),
        AugmentationSpec::from_names(&["flip", "gaussian_noise"], 0.75).unwrap(),
    );
    (scene, model, views)
}

#[test]
fn zero_epochs_leave_model_unchanged() {
    let (scene, mut model, views) = tiny_setup(1);
    let before = model.clone();
    let config = BarlowTwinsConfig { epochs: 0, batch_size: 16, ..Default::default() };
    let report = pretrain(&scene, &mut model, &views, &config, 1, None).unwrap();
    assert!(report.loss_history.is_empty());
    assert_eq!(model.params(), before.params());
    assert_eq!(model.buffers(), before.buffers());
}

#[test]
fn pretraining_is_deterministic() {
    let config = BarlowTwinsConfig { epochs: 2, batch_size: 16, base_lr: 1.0, ..Default::default() };
    let run = || {
        let (scene, mut model, views) = tiny_setup(2);
        let r = pretrain(&scene, &mut model, &views, &config, 9, None).unwrap();
        (r, model.params().to_vec())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert_eq!(a.loss_history.len(), 2);
    assert_eq!(a.steps, 2 * (100 / 16));
}

#[test]
fn pretraining_preconditions() {
    let (scene, mut model, views) = tiny_setup(3);
    let big = BarlowTwinsConfig { epochs: 1, batch_size: 512, ..Default::default() };
    assert!(matches!(
        pretrain(&scene, &mut model, &views, &big, 0, None),
        Err(Error::DegenerateBatch(_))
    ));
    model.detach_projector();
    let ok = BarlowTwinsConfig { epochs: 1, batch_size: 16, ..Default::default() };
    assert!(matches!(pretrain(&scene, &mut model, &views, &ok, 0, None), Err(Error::Config(_))));
}

#[test]
fn divergence_aborts() {
    let (scene, mut model, views) = tiny_setup(4);
    let config = BarlowTwinsConfig {
        epochs: 10,
        batch_size: 16,
        base_lr: 1e6,
        bias_lr_scale: 1.0,
        lars_trust_coefficient: 1.0,
        warmup_epochs: 0,
        divergence_factor: 1.01,
        ..Default::default()
    };
    let err = pretrain(&scene, &mut model, &views, &config, 0, None).unwrap_err();
    assert_eq!(err.class(), crate::ErrorClass::Numerical, "{err}");
}

#[test]
fn loss_history_and_checkpoint_files() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, mut model, views) = tiny_setup(5);
    let config = BarlowTwinsConfig { epochs: 2, batch_size: 20, checkpoint_every: 1, ..Default::default() };
    let ckpt = dir.path().join("bt.ckpt");
    let report = pretrain(&scene, &mut model, &views, &config, 0, Some(&ckpt)).unwrap();
    let loaded = crate::models::load_checkpoint(&ckpt).unwrap();
    assert_eq!(loaded.params(), model.params());

    let csv = dir.path().join("loss.csv");
    write_loss_history(&csv, &report.loss_history).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,mean_loss");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    let v: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(v, report.loss_history[1]);
}

#[test]
fn neighbor_pixel_pretraining_runs() {
    let (scene, _, _) = tiny_setup(6);
    let enc = EncoderConfig {
        kind: EncoderKind::Conv1d,
        input_bands: 8,
        patch_size: 1,
        widths: vec![4, 4],
        embedding_dim: 4,
        kernel_size: 3,
    };
    let mut model = build_encoder(&enc, 0).unwrap();
    model
        .attach_projector(&ProjectionHeadConfig { hidden_dims: vec![8], output_dim: 6 }, 0)
        .unwrap();
    let views = ViewSetup::symmetric(
        PairSamplingPolicy { mode: PairMode::NeighborPixels, ..Default::default() },
        AugmentationSpec::from_names(&["scaling"], 0.75).unwrap(),
    );
    let config = BarlowTwinsConfig { epochs: 1, batch_size: 25, ..Default::default() };
    let r = pretrain(&scene, &mut model, &views, &config, 0, None).unwrap();
    assert!(r.loss_history[0].is_finite());
}
