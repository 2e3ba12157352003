use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{barlow_twins_loss, cross_correlation, learning_rate_at, BarlowTwinsConfig, Lars};
use crate::data::{Patch, Scene};
use crate::error::{Error, Result};
use crate::models::{batch_input, save_checkpoint, Mode, Model};
use crate::rng::rng_indexed;
use crate::tensor::Tensor;
use crate::views::{make_views, AugmentationSpec, PairSamplingPolicy};

/// How the two branches of a training pair are produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewSetup {
    pub policy: PairSamplingPolicy,
    pub spec_a: AugmentationSpec,
    pub spec_b: AugmentationSpec,
}

impl ViewSetup {
    /// The same augmentation pipeline on both branches.
    pub fn symmetric(policy: PairSamplingPolicy, spec: AugmentationSpec) -> Self {
        ViewSetup {
            policy,
            spec_a: spec.clone(),
            spec_b: spec,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Mean training loss of every completed epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

fn branch_inputs(
    model: &Model,
    scene: &Scene,
    coords: &[(usize, usize)],
    views: &ViewSetup,
    rng: &mut crate::rng::Rng,
) -> Result<(Tensor, Tensor)> {
    let cfg = model.encoder_config();
    let mut a: Vec<Patch> = Vec::with_capacity(coords.len());
    let mut b: Vec<Patch> = Vec::with_capacity(coords.len());
    for &(r, c) in coords {
        let v = make_views(
            scene,
            r,
            c,
            cfg.patch_size,
            &views.policy,
            &views.spec_a,
            &views.spec_b,
            rng,
        )?;
        a.push(v.view_a);
        b.push(v.view_b);
    }
    let ra: Vec<&Patch> = a.iter().collect();
    let rb: Vec<&Patch> = b.iter().collect();
    Ok((batch_input(cfg, &ra)?, batch_input(cfg, &rb)?))
}

/// Barlow-Twins pre-training over every pixel of `scene` (labels unused).
///
/// Each epoch visits all coordinates in a fresh random order, in full
/// batches of `config.batch_size`; a trailing partial batch is skipped. The
/// model needs a projection head. With `checkpoint` set, the model is saved
/// there every `checkpoint_every` epochs and at the end.
pub fn pretrain(
    scene: &Scene,
    model: &mut Model,
    views: &ViewSetup,
    config: &BarlowTwinsConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<PretrainReport> {
    config.validate()?;
    views.policy.validate()?;
    if model.projector_config().is_none() {
        return Err(Error::Config("pre-training needs a projection head".into()));
    }
    if scene.bands() != model.encoder_config().input_bands {
        return Err(Error::Config(format!(
            "scene has {} bands, encoder expects {}",
            scene.bands(),
            model.encoder_config().input_bands
        )));
    }
    let coords: Vec<(usize, usize)> = (0..scene.height())
        .flat_map(|r| (0..scene.width()).map(move |c| (r, c)))
        .collect();
    let per_epoch = coords.len() / config.batch_size;
    if config.epochs > 0 && per_epoch == 0 {
        return Err(Error::DegenerateBatch(format!(
            "scene has {} pixels, fewer than one batch of {}",
            coords.len(),
            config.batch_size
        )));
    }
    let total = per_epoch * config.epochs;
    let warmup = per_epoch * config.warmup_epochs;
    let mut lars = Lars::new(config);
    let mut history: Vec<f64> = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        let mut order = coords.clone();
        order.shuffle(&mut rng_indexed(seed, "pretrain_order", &[epoch as u64]));
        let mut sum = 0.0;
        for (bi, batch) in order.chunks_exact(config.batch_size).enumerate() {
            let mut rng = rng_indexed(seed, "pretrain_views", &[epoch as u64, bi as u64]);
            let (xa, xb) = branch_inputs(model, scene, batch, views, &mut rng)?;
            let mut session = model.session(Mode::Train)?;
            let ha = session.encode(&xa)?;
            let za = session.project(&ha)?;
            let hb = session.encode(&xb)?;
            let zb = session.project(&hb)?;
            let c = cross_correlation(&za, &zb, config.centered)?;
            let loss = barlow_twins_loss(&c, config.lambda)?;
            loss.backward().map_err(|e| {
                Error::Numerical(format!("epoch {epoch}, batch {bi}: backward failed: {e}"))
            })?;
            let grads = session.grads();
            let updates = session.into_updates();
            model.apply_bn_updates(updates);
            let lr = learning_rate_at(step, total, warmup, config.base_lr);
            lars.step(model.params_mut(), &grads, lr)?;
            sum += f64::from(loss.item()?);
            step += 1;
        }
        let mean = sum / per_epoch as f64;
        log::info!("pretrain epoch {} loss {mean:.5}", epoch + 1);
        history.push(mean);
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!(
                "mean loss of epoch {} is {mean}; history {history:?}",
                epoch + 1
            )));
        }
        if mean > config.divergence_factor * history[0] {
            return Err(Error::Numerical(format!(
                "loss diverged at epoch {}: {mean:.5} > {} x {:.5}; history {history:?}",
                epoch + 1,
                config.divergence_factor,
                history[0]
            )));
        }
        if let Some(path) = checkpoint {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                save_checkpoint(model, path)?;
            }
        }
    }
    if let Some(path) = checkpoint {
        save_checkpoint(model, path)?;
    }
    Ok(PretrainReport {
        loss_history: history,
        steps: step,
    })
}

/// Cross-correlation of the two branches on one batch, in inference mode.
pub fn correlation_on_batch(
    model: &Model,
    scene: &Scene,
    coords: &[(usize, usize)],
    views: &ViewSetup,
    centered: bool,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = rng_indexed(seed, "correlation_batch", &[]);
    let (xa, xb) = branch_inputs(model, scene, coords, views, &mut rng)?;
    let mut session = model.session(Mode::Eval)?;
    let ha = session.encode(&xa)?;
    let za = session.project(&ha)?;
    let hb = session.encode(&xb)?;
    let zb = session.project(&hb)?;
    cross_correlation(&za, &zb, centered)
}

/// Writes `epoch,mean_loss` rows (epochs counted from 1).
pub fn write_loss_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{},{l}", i + 1).expect("writing to a string");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
