//! Few-shot classifier training under the linear, finetuning and supervised
//! protocols, plus evaluation metrics.

mod metrics;

pub use metrics::{
    chance_agreement, cohen_kappa, confusion_matrix, gray_level, overall_accuracy,
    per_class_accuracy, write_pgm, Confusion, MetricsReport,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{extract_patch, FewShotSplit, LabeledCoord, Patch, Scene};
use crate::error::{Error, Result};
use crate::models::{batch_input, build_encoder, Group, Mode, Model, Param};
use crate::rng::{derive_seed, rng_indexed};
use crate::tensor::softmax_cross_entropy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Frozen pre-trained encoder, only the linear head is trained.
    Linear,
    /// Pre-trained encoder as initialization, everything trained.
    Finetune,
    /// Same architecture from random initialization, everything trained.
    SupervisedBaseline,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [
        Protocol::SupervisedBaseline,
        Protocol::Linear,
        Protocol::Finetune,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Linear => "linear",
            Protocol::Finetune => "finetune",
            Protocol::SupervisedBaseline => "supervised_baseline",
        }
    }

    pub fn needs_pretrained(self) -> bool {
        self != Protocol::SupervisedBaseline
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown protocol `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub protocol: Protocol,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub finetune_encoder_lr_scale: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            protocol: Protocol::Linear,
            epochs: 100,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            finetune_encoder_lr_scale: 0.1,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("momentum must lie in [0, 1) and weight_decay be >= 0".into()));
        }
        if !(self.finetune_encoder_lr_scale >= 0.0) {
            return Err(Error::Config("finetune_encoder_lr_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// SGD with momentum, `v = m v + (g + wd w)`, `w -= lr * scale * v`; weight
/// decay touches weight matrices and kernels only.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f32,
    weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum: momentum as f32,
            weight_decay: weight_decay as f32,
            velocity: Vec::new(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut [Param],
        grads: &[Option<Vec<f32>>],
        lr: f64,
        group_scale: impl Fn(Group) -> f64,
    ) -> Result<()> {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let Some(g) = g else { continue };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
            }
            let step = (lr * group_scale(p.group)) as f32;
            let wd = if p.is_weight { self.weight_decay } else { 0.0 };
            for ((w, &gi), vi) in p.value.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + wd * *w;
                *w -= step * *vi;
            }
        }
        Ok(())
    }
}

/// A trained classifier `l o f` and its training trace.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub model: Model,
    pub protocol: Protocol,
    pub seed: u64,
    pub n_train: usize,
    /// Mean cross-entropy per epoch.
    pub loss_history: Vec<f64>,
    /// Labeled examples used in each epoch.
    pub examples_per_epoch: Vec<usize>,
}

fn check_compatible(model: &Model, scene: &Scene) -> Result<()> {
    let cfg = model.encoder_config();
    if cfg.input_bands != scene.bands() {
        return Err(Error::Config(format!(
            "encoder expects {} bands but the scene has {}",
            cfg.input_bands,
            scene.bands()
        )));
    }
    Ok(())
}

fn gather(scene: &Scene, coords: &[LabeledCoord], patch_size: usize) -> Result<Vec<Patch>> {
    coords
        .iter()
        .map(|c| extract_patch(scene, c.row, c.col, patch_size))
        .collect()
}

// Index batches of `size`; a trailing singleton joins the previous batch so
// every batch has at least two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Prepares the network for `config.protocol` and trains it on the split's
/// training pixels with SGD and cross-entropy.
///
/// `model` supplies the pre-trained encoder for the linear and finetuning
/// protocols; the supervised baseline only reuses its architecture and
/// starts from a fresh initialization derived from `config.seed`.
pub fn train_classifier(
    model: &Model,
    scene: &Scene,
    split: &FewShotSplit,
    config: &TrainConfig,
) -> Result<TrainedClassifier> {
    config.validate()?;
    check_compatible(model, scene)?;
    if split.train.is_empty() {
        return Err(Error::Config("split has no training pixels".into()));
    }
    let mut net = match config.protocol {
        Protocol::SupervisedBaseline => {
            build_encoder(model.encoder_config(), derive_seed(config.seed, "supervised_init"))?
        }
        _ => {
            let mut m = model.clone();
            m.detach_projector();
            m
        }
    };
    net.attach_linear_head(split.num_classes)?;
    match config.protocol {
        Protocol::Linear => net.set_frozen(true),
        Protocol::Finetune => {
            net.set_frozen(false);
            net.set_encoder_bn_frozen(true);
        }
        Protocol::SupervisedBaseline => net.set_frozen(false),
    }
    let encoder_scale = match config.protocol {
        Protocol::Finetune => config.finetune_encoder_lr_scale,
        _ => 1.0,
    };

    let patches = gather(scene, &split.train, net.encoder_config().patch_size)?;
    let labels: Vec<usize> = split.train.iter().map(LabeledCoord::class_index).collect();
    let mut sgd = Sgd::new(config.momentum, config.weight_decay);
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut examples_per_epoch = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..patches.len()).collect();
        order.shuffle(&mut rng_indexed(config.seed, "classify_order", &[epoch as u64]));
        let mut sum = 0.0;
        let mut seen = 0;
        for batch in batches(&order, config.batch_size) {
            let xs: Vec<&Patch> = batch.iter().map(|&i| &patches[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let x = batch_input(net.encoder_config(), &xs)?;
            let mut session = net.session(Mode::Train)?;
            let h = session.encode(&x)?;
            let logits = session.classify(&h)?;
            let loss = softmax_cross_entropy(&logits, &ys)?;
            loss.backward()?;
            let grads = session.grads();
            let updates = session.into_updates();
            net.apply_bn_updates(updates);
            sgd.step(net.params_mut(), &grads, config.lr, |g| match g {
                Group::Encoder => encoder_scale,
                _ => 1.0,
            })?;
            sum += f64::from(loss.item()?) * batch.len() as f64;
            seen += batch.len();
        }
        let mean = sum / seen as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("classifier loss at epoch {}", epoch + 1)));
        }
        log::debug!("{} epoch {} loss {mean:.5}", config.protocol.as_str(), epoch + 1);
        loss_history.push(mean);
        examples_per_epoch.push(seen);
    }
    Ok(TrainedClassifier {
        model: net,
        protocol: config.protocol,
        seed: config.seed,
        n_train: split.train.len(),
        loss_history,
        examples_per_epoch,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const PREDICT_BATCH: usize = 256;

/// Predicted 0-based class indices at `coords`.
pub fn predict_map(model: &Model, scene: &Scene, coords: &[(usize, usize)]) -> Result<Vec<usize>> {
    check_compatible(model, scene)?;
    let g = model
        .num_classes()
        .ok_or_else(|| Error::Config("model has no classification head".into()))?;
    let p = model.encoder_config().patch_size;
    let mut out = Vec::with_capacity(coords.len());
    for chunk in coords.chunks(PREDICT_BATCH) {
        let patches = chunk
            .iter()
            .map(|&(r, c)| extract_patch(scene, r, c, p))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Patch> = patches.iter().collect();
        let x = batch_input(model.encoder_config(), &refs)?;
        let mut session = model.session(Mode::Eval)?;
        let h = session.encode(&x)?;
        let logits = session.classify(&h)?;
        out.extend(logits.data().chunks_exact(g).map(argmax));
    }
    Ok(out)
}

/// Full-scene map of predicted labels (`1..=G`), row-major.
pub fn predict_scene(model: &Model, scene: &Scene) -> Result<Vec<u16>> {
    let coords: Vec<(usize, usize)> = (0..scene.height())
        .flat_map(|r| (0..scene.width()).map(move |c| (r, c)))
        .collect();
    Ok(predict_map(model, scene, &coords)?
        .into_iter()
        .map(|k| k as u16 + 1)
        .collect())
}

/// Metrics over the split's test pixels only.
pub fn evaluate(classifier: &TrainedClassifier, scene: &Scene, split: &FewShotSplit) -> Result<MetricsReport> {
    evaluate_model(
        &classifier.model,
        scene,
        split,
        classifier.n_train,
        classifier.seed,
        classifier.protocol.as_str(),
    )
}

/// Like [`evaluate`] for a bare network with a classification head, e.g. one
/// restored from a checkpoint.
pub fn evaluate_model(
    model: &Model,
    scene: &Scene,
    split: &FewShotSplit,
    n_train: usize,
    seed: u64,
    protocol: &str,
) -> Result<MetricsReport> {
    match model.num_classes() {
        Some(g) if g == split.num_classes => {}
        other => {
            return Err(Error::Consistency(format!(
                "classifier head has {other:?} classes but the split has {}",
                split.num_classes
            )))
        }
    }
    let coords: Vec<(usize, usize)> = split.test.iter().map(|c| (c.row, c.col)).collect();
    let predicted = predict_map(model, scene, &coords)?;
    let truth: Vec<usize> = split.test.iter().map(LabeledCoord::class_index).collect();
    let confusion = confusion_matrix(&truth, &predicted, split.num_classes)?;
    Ok(MetricsReport::from_confusion(confusion, n_train, seed, protocol))
}
