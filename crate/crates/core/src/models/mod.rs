//! Residual CNN encoders, the MLP projection head and the linear
//! classification head, over a flat parameter store.
//!
//! A [`Model`] owns plain `f32` parameter buffers in declaration order. Each
//! training step opens a [`Session`], which lifts the parameters into graph
//! leaves, runs the forward pass and collects batch-norm statistics that are
//! folded back into the model once the step is done.

mod checkpoint;
mod session;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use session::{BnUpdates, Mode, Session};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Patch;
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Convolutions along the spectral axis of single pixels.
    Conv1d,
    /// Spatial convolutions over `p x p` patches with bands as channels.
    Conv2d,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Conv1d => "conv1d",
            EncoderKind::Conv2d => "conv2d",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub input_bands: usize,
    pub patch_size: usize,
    /// Output channels of the two residual stages.
    pub widths: Vec<usize>,
    pub embedding_dim: usize,
    pub kernel_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Conv2d,
            input_bands: 103,
            patch_size: 9,
            widths: vec![64, 128],
            embedding_dim: 128,
            kernel_size: 3,
        }
    }
}

impl EncoderConfig {
    /// The kind actually built: a spatial encoder on `1 x 1` inputs
    /// degenerates to the spectral one.
    pub fn effective_kind(&self) -> EncoderKind {
        if self.patch_size == 1 {
            EncoderKind::Conv1d
        } else {
            self.kind
        }
    }

    /// Expected input shape for a batch of `n`.
    pub fn input_shape(&self, n: usize) -> Vec<usize> {
        match self.effective_kind() {
            EncoderKind::Conv1d => vec![n, 1, self.input_bands],
            EncoderKind::Conv2d => vec![n, self.input_bands, self.patch_size, self.patch_size],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.widths.len() != 2 {
            return bad(format!(
                "encoder has exactly 2 residual stages, got widths {:?}",
                self.widths
            ));
        }
        if self.widths.contains(&0) || self.embedding_dim == 0 || self.input_bands == 0 {
            return bad("encoder widths, embedding_dim and input_bands must be positive".into());
        }
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return bad(format!("patch_size must be odd, got {}", self.patch_size));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        let extent = match self.effective_kind() {
            EncoderKind::Conv1d => self.input_bands,
            EncoderKind::Conv2d => self.patch_size,
        };
        if extent < self.kernel_size {
            return bad(format!(
                "input extent {extent} is smaller than the stem kernel {}",
                self.kernel_size
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionHeadConfig {
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl Default for ProjectionHeadConfig {
    fn default() -> Self {
        ProjectionHeadConfig {
            hidden_dims: vec![256, 256],
            output_dim: 256,
        }
    }
}

impl ProjectionHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::Config("projector needs at least one hidden layer".into()));
        }
        if self.hidden_dims.contains(&0) || self.output_dim == 0 {
            return Err(Error::Config("projector dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Encoder,
    Projector,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub group: Group,
    /// Weight matrices and kernels; biases and norm affines are excluded
    /// from weight decay and layer-wise adaptation.
    pub is_weight: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub value: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    pub weight: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub conv1: Conv,
    pub bn1: Norm,
    pub conv2: Conv,
    pub bn2: Norm,
    pub shortcut: Option<(Conv, Norm)>,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayout {
    pub stem: Conv,
    pub stem_bn: Norm,
    pub blocks: [Block; 2],
    /// `(weight, bias)` of the output linear map, present when the
    /// embedding size differs from the last stage width.
    pub embed: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub(crate) struct ProjectorLayout {
    pub hidden: Vec<(usize, Norm)>,
    pub out: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadLayout {
    pub weight: usize,
    pub bias: usize,
}

struct Builder<'a> {
    params: &'a mut Vec<Param>,
    buffers: &'a mut Vec<Buffer>,
    group: Group,
    rng: Rng,
}

impl Builder<'_> {
    fn push(&mut self, name: String, shape: Vec<usize>, value: Vec<f32>, is_weight: bool) -> usize {
        self.params.push(Param {
            name,
            shape,
            value,
            group: self.group,
            is_weight,
        });
        self.params.len() - 1
    }

    /// He-normal weights with the given fan-in.
    fn he(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n: usize = shape.iter().product();
        let value = (0..n).map(|_| normal.sample(&mut self.rng) as f32).collect();
        self.push(name, shape, value, true)
    }

    fn zeros(&mut self, name: String, shape: Vec<usize>, is_weight: bool) -> usize {
        let n: usize = shape.iter().product();
        self.push(name, shape, vec![0.0; n], is_weight)
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let gamma = self.push(format!("{name}.gamma"), vec![c], vec![1.0; c], false);
        let beta = self.zeros(format!("{name}.beta"), vec![c], false);
        self.buffers.push(Buffer {
            name: format!("{name}.running_mean"),
            value: vec![0.0; c],
        });
        self.buffers.push(Buffer {
            name: format!("{name}.running_var"),
            value: vec![1.0; c],
        });
        let n = self.buffers.len();
        Norm {
            gamma,
            beta,
            mean: n - 2,
            var: n - 1,
        }
    }

    fn conv(&mut self, name: &str, kind: EncoderKind, cin: usize, cout: usize, k: usize, padding: usize) -> Conv {
        let shape = match kind {
            EncoderKind::Conv1d => vec![cout, cin, k],
            EncoderKind::Conv2d => vec![cout, cin, k, k],
        };
        let fan_in = shape[1..].iter().product();
        Conv {
            weight: self.he(format!("{name}.weight"), shape, fan_in),
            padding,
        }
    }

    fn linear(&mut self, name: &str, cin: usize, cout: usize) -> usize {
        self.he(format!("{name}.weight"), vec![cin, cout], cin)
    }
}

fn build_encoder_layout(cfg: &EncoderConfig, b: &mut Builder<'_>) -> EncoderLayout {
    let kind = cfg.effective_kind();
    let k = cfg.kernel_size;
    let cin = match kind {
        EncoderKind::Conv1d => 1,
        EncoderKind::Conv2d => cfg.input_bands,
    };
    let stem = b.conv("encoder.stem", kind, cin, cfg.widths[0], k, 0);
    let stem_bn = b.norm("encoder.stem_bn", cfg.widths[0]);
    let mut ins = cfg.widths[0];
    let mut blocks = Vec::with_capacity(2);
    for (i, &out) in cfg.widths.iter().enumerate() {
        let p = format!("encoder.block{}", i + 1);
        let conv1 = b.conv(&format!("{p}.conv1"), kind, ins, out, k, k / 2);
        let bn1 = b.norm(&format!("{p}.bn1"), out);
        let conv2 = b.conv(&format!("{p}.conv2"), kind, out, out, k, k / 2);
        let bn2 = b.norm(&format!("{p}.bn2"), out);
        let shortcut = (ins != out).then(|| {
            let c = b.conv(&format!("{p}.shortcut"), kind, ins, out, 1, 0);
            (c, b.norm(&format!("{p}.shortcut_bn"), out))
        });
        blocks.push(Block {
            conv1,
            bn1,
            conv2,
            bn2,
            shortcut,
        });
        ins = out;
    }
    let embed = (cfg.embedding_dim != ins).then(|| {
        let w = b.linear("encoder.embed", ins, cfg.embedding_dim);
        let bias = b.zeros("encoder.embed.bias".into(), vec![cfg.embedding_dim], false);
        (w, bias)
    });
    EncoderLayout {
        stem,
        stem_bn,
        blocks: [blocks[0], blocks[1]],
        embed,
    }
}

fn build_projector_layout(input: usize, cfg: &ProjectionHeadConfig, b: &mut Builder<'_>) -> ProjectorLayout {
    let mut ins = input;
    let mut hidden = Vec::with_capacity(cfg.hidden_dims.len());
    for (i, &h) in cfg.hidden_dims.iter().enumerate() {
        let w = b.linear(&format!("projector.linear{}", i + 1), ins, h);
        hidden.push((w, b.norm(&format!("projector.bn{}", i + 1), h)));
        ins = h;
    }
    let out = b.linear("projector.out", ins, cfg.output_dim);
    ProjectorLayout { hidden, out }
}

/// Encoder with optional projection and classification heads.
#[derive(Debug, Clone)]
pub struct Model {
    encoder_config: EncoderConfig,
    projector_config: Option<ProjectionHeadConfig>,
    num_classes: Option<usize>,
    params: Vec<Param>,
    buffers: Vec<Buffer>,
    pub(crate) encoder: EncoderLayout,
    pub(crate) projector: Option<ProjectorLayout>,
    pub(crate) head: Option<HeadLayout>,
    encoder_trainable: bool,
    encoder_bn_train: bool,
}

/// Builds an encoder with He-initialized weights drawn from `seed`.
pub fn build_encoder(config: &EncoderConfig, seed: u64) -> Result<Model> {
    Model::new(config, seed)
}

impl Model {
    pub fn new(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        let mut b = Builder {
            params: &mut params,
            buffers: &mut buffers,
            group: Group::Encoder,
            rng: rng_for(seed, "encoder_init"),
        };
        let encoder = build_encoder_layout(config, &mut b);
        Ok(Model {
            encoder_config: config.clone(),
            projector_config: None,
            num_classes: None,
            params,
            buffers,
            encoder,
            projector: None,
            head: None,
            encoder_trainable: true,
            encoder_bn_train: true,
        })
    }

    /// Adds (or replaces) the projection head used during pre-training.
    pub fn attach_projector(&mut self, config: &ProjectionHeadConfig, seed: u64) -> Result<()> {
        config.validate()?;
        let head = self.take_head();
        self.take_projector();
        let mut b = Builder {
            params: &mut self.params,
            buffers: &mut self.buffers,
            group: Group::Projector,
            rng: rng_for(seed, "projector_init"),
        };
        self.projector = Some(build_projector_layout(
            self.encoder_config.embedding_dim,
            config,
            &mut b,
        ));
        self.projector_config = Some(config.clone());
        self.restore_head(head);
        Ok(())
    }

    /// Adds (or replaces) a zero-initialized linear classifier on the embeddings.
    pub fn attach_linear_head(&mut self, num_classes: usize) -> Result<()> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "a classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        self.take_head();
        let emb = self.encoder_config.embedding_dim;
        let mut b = Builder {
            params: &mut self.params,
            buffers: &mut self.buffers,
            group: Group::Head,
            rng: rng_for(0, "head_init"),
        };
        let weight = b.zeros("head.weight".into(), vec![emb, num_classes], true);
        let bias = b.zeros("head.bias".into(), vec![num_classes], false);
        self.head = Some(HeadLayout { weight, bias });
        self.num_classes = Some(num_classes);
        Ok(())
    }

    /// Removes the projection head, keeping encoder and classifier.
    pub fn detach_projector(&mut self) {
        let head = self.take_head();
        self.take_projector();
        self.restore_head(head);
    }

    // Declaration order is always encoder, projector, head.
    fn take_head(&mut self) -> Option<(usize, Vec<Param>)> {
        let layout = self.head.take()?;
        let params = self.params.split_off(layout.weight);
        Some((self.num_classes.take().expect("head present"), params))
    }

    fn restore_head(&mut self, head: Option<(usize, Vec<Param>)>) {
        if let Some((g, params)) = head {
            let weight = self.params.len();
            self.params.extend(params);
            self.head = Some(HeadLayout {
                weight,
                bias: weight + 1,
            });
            self.num_classes = Some(g);
        }
    }

    fn take_projector(&mut self) {
        if self.projector.take().is_some() {
            let n = self.parameter_tensors(Group::Encoder);
            self.params.truncate(n);
            let nb = self.encoder_buffer_count();
            self.buffers.truncate(nb);
            self.projector_config = None;
        }
    }

    fn parameter_tensors(&self, group: Group) -> usize {
        self.params.iter().filter(|p| p.group == group).count()
    }

    fn encoder_buffer_count(&self) -> usize {
        self.buffers
            .iter()
            .take_while(|b| b.name.starts_with("encoder."))
            .count()
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder_config
    }

    pub fn projector_config(&self) -> Option<&ProjectionHeadConfig> {
        self.projector_config.as_ref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub(crate) fn buffers_mut(&mut self) -> &mut [Buffer] {
        &mut self.buffers
    }

    /// Number of scalar parameters in `group`.
    pub fn parameter_count(&self, group: Group) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.len())
            .sum()
    }

    /// Freezing stops encoder updates and keeps its batch-norm layers on
    /// their running statistics; unfreezing restores both.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.encoder_trainable = !frozen;
        self.encoder_bn_train = !frozen;
    }

    /// Keeps encoder batch-norm layers on their running statistics while the
    /// encoder weights remain trainable.
    pub fn set_encoder_bn_frozen(&mut self, frozen: bool) {
        self.encoder_bn_train = !frozen;
    }

    pub fn is_frozen(&self) -> bool {
        !self.encoder_trainable
    }

    pub(crate) fn is_trainable(&self, index: usize) -> bool {
        self.params[index].group != Group::Encoder || self.encoder_trainable
    }

    pub(crate) fn encoder_bn_train(&self) -> bool {
        self.encoder_bn_train
    }

    /// Copies encoder parameters and statistics from `other`, which must have
    /// the same encoder configuration.
    pub fn load_encoder_from(&mut self, other: &Model) -> Result<()> {
        if other.encoder_config != self.encoder_config {
            return Err(Error::Consistency(format!(
                "encoder configurations differ: {:?} vs {:?}",
                other.encoder_config, self.encoder_config
            )));
        }
        let src = other.params.iter().filter(|p| p.group == Group::Encoder);
        let dst = self.params.iter_mut().filter(|p| p.group == Group::Encoder);
        dst.zip(src).for_each(|(d, s)| d.value.clone_from(&s.value));
        let n = self.encoder_buffer_count();
        for (d, s) in self.buffers[..n].iter_mut().zip(&other.buffers) {
            d.value.clone_from(&s.value);
        }
        Ok(())
    }

    /// Opens a forward pass; see [`Session`].
    pub fn session(&self, mode: Mode) -> Result<Session<'_>> {
        Session::new(self, mode)
    }

    pub fn apply_bn_updates(&mut self, updates: BnUpdates) {
        updates.apply(self);
    }

    /// Inference-mode embeddings of an input batch.
    pub fn embed(&self, input: &Tensor) -> Result<Tensor> {
        self.session(Mode::Eval)?.encode(input)
    }
}

/// Stacks patches into the encoder's input layout: `[n, C, p, p]` for the
/// spatial encoder, `[n, 1, C]` (center spectra) for the spectral one.
pub fn batch_input(config: &EncoderConfig, patches: &[&Patch]) -> Result<Tensor> {
    let c = config.input_bands;
    if patches.is_empty() {
        return Err(Error::Dimension("empty batch".into()));
    }
    for x in patches {
        if x.bands != c {
            return Err(Error::Dimension(format!(
                "patch has {} bands, encoder expects {c}",
                x.bands
            )));
        }
    }
    let n = patches.len();
    match config.effective_kind() {
        EncoderKind::Conv1d => {
            let mut data = Vec::with_capacity(n * c);
            patches.iter().for_each(|x| data.extend_from_slice(x.center()));
            Tensor::new(data, &[n, 1, c])
        }
        EncoderKind::Conv2d => {
            let p = config.patch_size;
            let mut data = vec![0.0f32; n * c * p * p];
            for (i, x) in patches.iter().enumerate() {
                if x.size != p {
                    return Err(Error::Dimension(format!(
                        "patch is {0}x{0}, encoder expects {p}x{p}",
                        x.size
                    )));
                }
                let out = &mut data[i * c * p * p..(i + 1) * c * p * p];
                for (pos, px) in x.data.chunks_exact(c).enumerate() {
                    for (b, &v) in px.iter().enumerate() {
                        out[b * p * p + pos] = v;
                    }
                }
            }
            Tensor::new(data, &[n, c, p, p])
        }
    }
}

/// Inference embeddings (`batch x embedding_dim`).
pub fn forward_encoder(model: &Model, batch: &Tensor) -> Result<Tensor> {
    model.embed(batch)
}

/// Inference projections (`batch x D`) of embeddings.
pub fn forward_projector(model: &Model, h: &Tensor) -> Result<Tensor> {
    model.session(Mode::Eval)?.project(h)
}
