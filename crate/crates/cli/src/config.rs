//! Run configuration: one JSON document with a section per pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use hsissl_core::classify::{Protocol, TrainConfig};
use hsissl_core::data::SynthConfig;
use hsissl_core::models::{EncoderConfig, ProjectionHeadConfig};
use hsissl_core::ssl::{BarlowTwinsConfig, ViewSetup};
use hsissl_core::views::{AugmentationSpec, PairSamplingPolicy, Transform, DEFAULT_PROBABILITY};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Scene header (`.hdr`); the payload sits next to it.
    pub image: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Per-band standardization before any training.
    pub normalize: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image: None,
            labels: None,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `input_bands = 0` takes the band count from the scene.
    pub encoder: EncoderConfig,
    pub projector: ProjectionHeadConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            encoder: EncoderConfig {
                input_bands: 0,
                ..Default::default()
            },
            projector: ProjectionHeadConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub epochs: usize,
    /// Candidate transforms; pairs are applied in this order.
    pub transforms: Vec<String>,
    pub probability: f64,
    /// Shots per class of the linear evaluation.
    pub shots: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            epochs: 20,
            transforms: Transform::NAMES.iter().map(|s| s.to_string()).collect(),
            probability: DEFAULT_PROBABILITY,
            shots: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub synth: SynthConfig,
    pub model: ModelSection,
    pub pairs: PairSamplingPolicy,
    pub augment: AugmentationSpec,
    /// Second-branch pipeline; `augment` is used on both when absent.
    pub augment_b: Option<AugmentationSpec>,
    pub pretrain: BarlowTwinsConfig,
    /// `protocol` and `seed` are overwritten per grid cell.
    pub train: TrainConfig,
    pub protocols: Vec<Protocol>,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub ablate: AblateConfig,
    /// Encoder checkpoint for `classify`, classifier checkpoint for `eval`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scene: SceneConfig::default(),
            synth: SynthConfig::default(),
            model: ModelSection::default(),
            pairs: PairSamplingPolicy::default(),
            augment: AugmentationSpec::from_names(
                &["flip", "rotate", "gaussian_noise", "scaling"],
                DEFAULT_PROBABILITY,
            )
            .expect("default augmentations are valid"),
            augment_b: None,
            pretrain: BarlowTwinsConfig::default(),
            train: TrainConfig::default(),
            protocols: Protocol::ALL.to_vec(),
            shots: vec![5, 10],
            seeds: vec![0, 1, 2],
            ablate: AblateConfig::default(),
            checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn views(&self) -> ViewSetup {
        ViewSetup {
            policy: self.pairs.clone(),
            spec_a: self.augment.clone(),
            spec_b: self.augment_b.clone().unwrap_or_else(|| self.augment.clone()),
        }
    }

    /// Checks everything that does not depend on the scene contents.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        if self.shots.is_empty() || self.shots.contains(&0) {
            return Err(CliError::Config("shots must be a nonempty list of positive counts".into()));
        }
        if self.protocols.is_empty() {
            return Err(CliError::Config("protocol list is empty".into()));
        }
        if self.ablate.shots == 0 {
            return Err(CliError::Config("ablate.shots must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ablate.probability) {
            return Err(CliError::Config("ablate.probability must lie in [0, 1]".into()));
        }
        for name in &self.ablate.transforms {
            Transform::by_name(name)?;
        }
        self.pairs.validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        self.model.projector.validate()?;
        Ok(())
    }

    /// Every input file a command reads must exist before any work starts.
    pub fn check_inputs(&self, scene: bool, labels: bool, checkpoint: bool) -> Result<(), CliError> {
        let wanted = [
            (scene, &self.scene.image),
            (labels, &self.scene.labels),
            (checkpoint, &self.checkpoint),
        ];
        for (_, path) in wanted.iter().filter(|(w, _)| *w) {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(CliError::Config(format!("{} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    /// Relative paths in a config file are taken relative to that file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.scene.image);
        fix(&mut self.scene.labels);
        fix(&mut self.checkpoint);
    }
}

/// Sets a dotted key in a JSON object, creating intermediate objects.
/// The value is parsed as JSON and falls back to a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?} descends into a non-object")))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::Config(format!("override {key:?} descends into a non-object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads the config file (or starts from defaults), applies overrides and
/// resolves relative paths. Validation is left to the caller.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !doc.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    // a partial encoder section would otherwise pick up the library's
    // default band count instead of following the scene
    let encoder = doc.pointer("/model/encoder");
    if encoder.is_none_or(|e| e.get("input_bands").is_none()) {
        apply_override(&mut doc, "model.encoder.input_bands=0")?;
    }
    let mut cfg: RunConfig =
        serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(dir) = path.and_then(Path::parent) {
        cfg.resolve_paths(dir);
    }
    Ok(cfg)
}
