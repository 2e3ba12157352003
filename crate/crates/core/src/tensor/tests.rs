use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

type F = fn(&[Tensor<f64>]) -> Result<Tensor<f64>>;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Weighted-sum probe `sum(f(x) * r)` so every output element contributes.
fn probe(out: &Tensor<f64>, weights: &[f64]) -> Result<Tensor<f64>> {
    let r = Tensor::new(weights.to_vec(), out.shape())?;
    out.mul(&r)?.sum()
}

/// Central finite differences (step 1e-5) against backward; returns the worst
/// relative error `|a - n| / max(|a|, |n|)` (norm-wise per input).
fn gradcheck(shapes: &[&[usize]], seed: u64, f: F) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| random_vec(&mut rng, s.iter().product()))
        .collect();
    let params: Vec<Tensor<f64>> = values
        .iter()
        .zip(shapes)
        .map(|(v, s)| Tensor::parameter(v.clone(), s).unwrap())
        .collect();
    let out = f(&params).unwrap();
    let weights = random_vec(&mut rng, out.numel());
    probe(&out, &weights).unwrap().backward().unwrap();

    let eval = |vals: &[Vec<f64>]| -> f64 {
        let ts: Vec<Tensor<f64>> = vals
            .iter()
            .zip(shapes)
            .map(|(v, s)| Tensor::new(v.clone(), s).unwrap())
            .collect();
        probe(&f(&ts).unwrap(), &weights).unwrap().item().unwrap()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, p) in params.iter().enumerate() {
        let analytic = p.grad().expect("gradient reached every input");
        let mut numeric = vec![0.0; analytic.len()];
        for j in 0..analytic.len() {
            let mut plus = values.clone();
            plus[i][j] += h;
            let mut minus = values.clone();
            minus[i][j] -= h;
            numeric[j] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-12));
    }
    worst
}

fn assert_gradcheck(shapes: &[&[usize]], f: F) {
    for seed in 0..5 {
        let err = gradcheck(shapes, seed, f);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn matmul_identity_and_hand_case() {
    let eye = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    let m = Tensor::new(vec![3.0, -1.5, 2.0, 7.0], &[2, 2]).unwrap();
    assert_eq!(eye.matmul(&m).unwrap().data(), m.data());

    let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
    let b = Tensor::new(vec![1.0, 1.0], &[2, 1]).unwrap();
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), &[2, 1]);
    assert_eq!(c.data(), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_mismatch() {
    let a = Tensor::<f64>::zeros(&[2, 3]).unwrap();
    let b = Tensor::<f64>::zeros(&[2, 3]).unwrap();
    assert!(matches!(a.matmul(&b), Err(Error::Dimension(_))));
}

#[test]
fn matmul_gradients() {
    assert_gradcheck(&[&[3, 4], &[4, 2]], |t| t[0].matmul(&t[1]));
}

#[test]
fn conv2d_identity_and_box_filter() {
    let x = Tensor::new((0..18).map(f64::from).collect(), &[1, 2, 3, 3]).unwrap();
    // 1x1 kernel that maps each channel onto itself
    let k = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2, 1, 1]).unwrap();
    assert_eq!(conv2d(&x, &k, 1, 0).unwrap().data(), x.data());

    let ones = Tensor::new(vec![1.0; 25], &[1, 1, 5, 5]).unwrap();
    let k = Tensor::new(vec![1.0; 9], &[1, 1, 3, 3]).unwrap();
    let y = conv2d(&ones, &k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert!(y.data().iter().all(|&v| v == 9.0));
}

#[test]
fn conv2d_rejects_bad_geometry() {
    let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]).unwrap();
    let k = Tensor::<f64>::zeros(&[1, 1, 3, 3]).unwrap();
    // (4 - 3) / 2 is not integral
    assert!(matches!(conv2d(&x, &k, 2, 0), Err(Error::Dimension(_))));
    let big = Tensor::<f64>::zeros(&[1, 1, 7, 7]).unwrap();
    assert!(matches!(conv2d(&x, &big, 1, 1), Err(Error::Dimension(_))));
}

#[test]
fn conv2d_gradients() {
    assert_gradcheck(&[&[2, 3, 5, 5], &[4, 3, 3, 3]], |t| conv2d(&t[0], &t[1], 1, 1));
    assert_gradcheck(&[&[2, 2, 5, 5], &[3, 2, 3, 3]], |t| conv2d(&t[0], &t[1], 2, 0));
}

#[test]
fn conv1d_identity_and_hand_case() {
    let x = Tensor::new(vec![1.0, 2.0, 3.0], &[1, 1, 3]).unwrap();
    let unit = Tensor::new(vec![1.0], &[1, 1, 1]).unwrap();
    assert_eq!(conv1d(&x, &unit, 1, 0).unwrap().data(), x.data());
    let k = Tensor::new(vec![1.0, 1.0], &[1, 1, 2]).unwrap();
    let y = conv1d(&x, &k, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2]);
    assert_eq!(y.data(), &[3.0, 5.0]);
}

#[test]
fn conv1d_gradients() {
    assert_gradcheck(&[&[3, 2, 7], &[4, 2, 3]], |t| conv1d(&t[0], &t[1], 1, 1));
}

#[test]
fn batch_norm_constant_and_standard_columns() {
    let gamma = Tensor::<f64>::new(vec![1.0, 1.0], &[2]).unwrap();
    let beta = Tensor::new(vec![0.0, 0.0], &[2]).unwrap();
    // column 0 constant, column 1 already zero-mean unit-variance
    let x = Tensor::<f64>::new(vec![5.0, 1.0, 5.0, -1.0, 5.0, 1.0, 5.0, -1.0], &[4, 2]).unwrap();
    let (y, stats) = batch_norm(&x, &gamma, &beta, BatchNormMode::Train).unwrap();
    let stats = stats.unwrap();
    assert_eq!(stats.mean, vec![5.0, 0.0]);
    for row in y.data().chunks(2) {
        assert_eq!(row[0], 0.0);
        assert!((row[1].abs() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn batch_norm_degenerate_batch() {
    let gamma = Tensor::new(vec![1.0], &[1]).unwrap();
    let beta = Tensor::new(vec![0.0], &[1]).unwrap();
    let x = Tensor::new(vec![1.0, 2.0, 3.0], &[1, 1, 3]).unwrap();
    assert!(matches!(
        batch_norm(&x, &gamma, &beta, BatchNormMode::Train),
        Err(Error::DegenerateBatch(_))
    ));
    let (mean, var) = ([0.0], [1.0]);
    assert!(batch_norm(&x, &gamma, &beta, BatchNormMode::Eval { mean: &mean, var: &var }).is_ok());
}

#[test]
fn batch_norm_running_update() {
    let stats = BatchStats::<f64> {
        mean: vec![2.0],
        var: vec![3.0],
        count: 4,
    };
    let (mut rm, mut rv) = (vec![0.0f64], vec![1.0f64]);
    stats.update_running(&mut rm, &mut rv, 0.1);
    assert!((rm[0] - 0.2).abs() < 1e-12);
    // unbiased variance 3 * 4 / 3 = 4
    assert!((rv[0] - (0.9 + 0.4)).abs() < 1e-12);
}

#[test]
fn batch_norm_gradients() {
    let f: F = |t| batch_norm(&t[0], &t[1], &t[2], BatchNormMode::Train).map(|r| r.0);
    assert_gradcheck(&[&[6, 3], &[3], &[3]], f);
    assert_gradcheck(&[&[3, 2, 2, 2], &[2], &[2]], f);
    let eval: F = |t| {
        let (mean, var) = ([0.3, -0.2], [0.5, 2.0]);
        batch_norm(&t[0], &t[1], &t[2], BatchNormMode::Eval { mean: &mean, var: &var }).map(|r| r.0)
    };
    assert_gradcheck(&[&[4, 2], &[2], &[2]], eval);
}

#[test]
fn cross_entropy_uniform_and_confident() {
    let logits = Tensor::new(vec![0.0; 9], &[1, 9]).unwrap();
    let loss = softmax_cross_entropy(&logits, &[4]).unwrap().item().unwrap();
    assert!((loss - 9f64.ln()).abs() < 1e-12);
    assert!((loss - 2.19722).abs() < 1e-5);

    let mut prev = f64::INFINITY;
    for margin in [0.0, 1.0, 5.0, 20.0, 100.0] {
        let logits = Tensor::new(vec![margin, 0.0, 0.0], &[1, 3]).unwrap();
        let l = softmax_cross_entropy(&logits, &[0]).unwrap().item().unwrap();
        assert!(l < prev);
        prev = l;
    }
    assert!(prev < 1e-12);
}

#[test]
fn cross_entropy_label_out_of_range() {
    let logits = Tensor::<f64>::zeros(&[2, 3]).unwrap();
    assert!(matches!(
        softmax_cross_entropy(&logits, &[0, 3]),
        Err(Error::Label(_))
    ));
}

#[test]
fn cross_entropy_and_relu_gradients() {
    assert_gradcheck(&[&[5, 4]], |t| softmax_cross_entropy(&t[0], &[0, 3, 1, 1, 2]));
    assert_gradcheck(&[&[4, 3], &[3, 5]], |t| t[0].matmul(&t[1])?.relu());
    assert_gradcheck(&[&[3, 4, 2, 2]], |t| t[0].global_avg_pool());
    assert_gradcheck(&[&[5, 3]], |t| t[0].center_columns()?.normalize_columns(1e-12));
    assert_gradcheck(&[&[4, 3], &[3]], |t| t[0].add_bias(&t[1])?.transpose());
}

#[test]
fn backward_requires_scalar() {
    let p = Tensor::<f64>::parameter(vec![1.0, 2.0], &[2]).unwrap();
    assert!(matches!(p.scale(2.0).unwrap().backward(), Err(Error::Shape(_))));
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_vec(&mut rng, 12);
    let b = random_vec(&mut rng, 8);
    let run = |alpha: f64| {
        let pa = Tensor::parameter(a.clone(), &[3, 4]).unwrap();
        let pb = Tensor::parameter(b.clone(), &[4, 2]).unwrap();
        pa.matmul(&pb).unwrap().relu().unwrap().sum().unwrap().scale(alpha).unwrap().backward().unwrap();
        (pa.grad().unwrap(), pb.grad().unwrap())
    };
    let (ga, gb) = run(1.0);
    let (ga3, gb3) = run(-2.5);
    for (x, y) in ga.iter().chain(&gb).zip(ga3.iter().chain(&gb3)) {
        assert!((x * -2.5 - y).abs() < 1e-12);
    }
}

#[test]
fn gradients_accumulate_over_shared_uses() {
    let x = Tensor::<f64>::parameter(vec![1.0, -2.0, 3.0], &[3]).unwrap();
    // d/dx [sum(2x) + sum(x*x)] = 2 + 2x
    let loss = x.scale(2.0).unwrap().sum().unwrap().add(&x.mul(&x).unwrap().sum().unwrap()).unwrap();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0, -2.0, 8.0]);

    // a second backward pass adds into the same buffer
    x.sum().unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![5.0, -1.0, 9.0]);
    x.zero_grad();
    assert!(x.grad().is_none());
}

#[test]
fn diamond_graph_visits_each_node_once() {
    let x = Tensor::<f64>::parameter(vec![2.0], &[1]).unwrap();
    let y = x.scale(3.0).unwrap();
    let z = y.add(&y).unwrap().add(&y).unwrap();
    z.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![9.0]);
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_vec(&mut rng, 2 * 3 * 6 * 6);
    let k = random_vec(&mut rng, 4 * 3 * 3 * 3);
    let run = || {
        let xt = Tensor::new(x.iter().map(|&v| v as f32).collect(), &[2, 3, 6, 6]).unwrap();
        let kt = Tensor::new(k.iter().map(|&v| v as f32).collect(), &[4, 3, 3, 3]).unwrap();
        conv2d(&xt, &kt, 1, 1).unwrap().to_vec()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn non_finite_values_are_rejected() {
    assert!(matches!(
        Tensor::<f32>::new(vec![f32::NAN], &[1]),
        Err(Error::NonFinite(_))
    ));
    let big = Tensor::<f32>::new(vec![3e38], &[1]).unwrap();
    assert!(matches!(big.scale(10.0), Err(Error::NonFinite(_))));
}

#[test]
fn tensors_are_send_and_sync() {
    fn check<T: Send + Sync>() {}
    check::<Tensor<f32>>();
    check::<Tensor<f64>>();
}
