use super::{Conv, EncoderKind, Model, Norm};
use crate::error::{Error, Result};
use crate::tensor::{batch_norm, conv1d, conv2d, BatchNormMode, BatchStats, Tensor, BN_MOMENTUM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Gradients for trainable parameters, batch statistics where allowed.
    Train,
    /// No gradients, running statistics everywhere.
    Eval,
}

/// Running-statistic updates gathered during a training forward pass.
#[derive(Debug, Default)]
pub struct BnUpdates(Vec<(usize, usize, BatchStats<f32>)>);

impl BnUpdates {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn apply(self, model: &mut Model) {
        let buffers = model.buffers_mut();
        for (mean, var, stats) in self.0 {
            let mut rm = std::mem::take(&mut buffers[mean].value);
            let mut rv = std::mem::take(&mut buffers[var].value);
            stats.update_running(&mut rm, &mut rv, BN_MOMENTUM as f32);
            buffers[mean].value = rm;
            buffers[var].value = rv;
        }
    }
}

/// One forward pass over a model's parameters.
///
/// In [`Mode::Train`] every trainable parameter becomes a gradient-tracking
/// leaf; after `loss.backward()` the gradients are read with
/// [`Session::grads`] and batch statistics are handed back to the model with
/// [`Session::into_updates`].
pub struct Session<'m> {
    model: &'m Model,
    mode: Mode,
    leaves: Vec<Tensor>,
    updates: BnUpdates,
}

impl<'m> Session<'m> {
    pub(crate) fn new(model: &'m Model, mode: Mode) -> Result<Self> {
        let leaves = model
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let track = mode == Mode::Train && model.is_trainable(i);
                Tensor::leaf(p.value.clone(), &p.shape, track)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Session {
            model,
            mode,
            leaves,
            updates: BnUpdates::default(),
        })
    }

    /// Graph leaf of parameter `index`.
    pub fn leaf(&self, index: usize) -> &Tensor {
        &self.leaves[index]
    }

    fn conv(&self, x: &Tensor, c: Conv) -> Result<Tensor> {
        let w = &self.leaves[c.weight];
        match self.model.encoder_config().effective_kind() {
            EncoderKind::Conv1d => conv1d(x, w, 1, c.padding),
            EncoderKind::Conv2d => conv2d(x, w, 1, c.padding),
        }
    }

    fn norm(&mut self, x: &Tensor, n: Norm, batch_stats: bool) -> Result<Tensor> {
        let (gamma, beta) = (&self.leaves[n.gamma], &self.leaves[n.beta]);
        if batch_stats {
            let (y, stats) = batch_norm(x, gamma, beta, BatchNormMode::Train)?;
            let stats = stats.expect("training mode returns statistics");
            self.updates.0.push((n.mean, n.var, stats));
            Ok(y)
        } else {
            let buffers = self.model.buffers();
            let mode = BatchNormMode::Eval {
                mean: &buffers[n.mean].value,
                var: &buffers[n.var].value,
            };
            Ok(batch_norm(x, gamma, beta, mode)?.0)
        }
    }

    /// Embeddings `h` (`batch x embedding_dim`).
    pub fn encode(&mut self, x: &Tensor) -> Result<Tensor> {
        let cfg = self.model.encoder_config();
        let n = x.shape().first().copied().unwrap_or(0);
        if x.shape() != cfg.input_shape(n).as_slice() {
            return Err(Error::Dimension(format!(
                "encoder expects input {:?}, got {:?}",
                cfg.input_shape(n),
                x.shape()
            )));
        }
        let layout = self.model.encoder.clone();
        let batch_stats = self.mode == Mode::Train && self.model.encoder_bn_train();

        let h = self.conv(x, layout.stem)?;
        let mut h = self.norm(&h, layout.stem_bn, batch_stats)?.relu()?;
        for b in layout.blocks {
            let y = self.conv(&h, b.conv1)?;
            let y = self.norm(&y, b.bn1, batch_stats)?.relu()?;
            let y = self.conv(&y, b.conv2)?;
            let y = self.norm(&y, b.bn2, batch_stats)?;
            let skip = match b.shortcut {
                Some((c, bn)) => {
                    let s = self.conv(&h, c)?;
                    self.norm(&s, bn, batch_stats)?
                }
                None => h.clone(),
            };
            h = y.add(&skip)?.relu()?;
        }
        let h = h.global_avg_pool()?;
        match layout.embed {
            Some((w, bias)) => h.matmul(&self.leaves[w])?.add_bias(&self.leaves[bias]),
            None => Ok(h),
        }
    }

    /// Projections `z` (`batch x D`) of embeddings.
    pub fn project(&mut self, h: &Tensor) -> Result<Tensor> {
        let layout = self
            .model
            .projector
            .clone()
            .ok_or_else(|| Error::Config("model has no projection head".into()))?;
        let batch_stats = self.mode == Mode::Train;
        let mut z = h.clone();
        for (w, bn) in layout.hidden {
            let y = z.matmul(&self.leaves[w])?;
            z = self.norm(&y, bn, batch_stats)?.relu()?;
        }
        z.matmul(&self.leaves[layout.out])
    }

    /// Class logits (`batch x G`) of embeddings.
    pub fn classify(&mut self, h: &Tensor) -> Result<Tensor> {
        let head = self
            .model
            .head
            .ok_or_else(|| Error::Config("model has no classification head".into()))?;
        h.matmul(&self.leaves[head.weight])?
            .add_bias(&self.leaves[head.bias])
    }

    /// Gradients aligned with [`Model::params`]; `None` for parameters that
    /// are not trained in this session. Unreached parameters get zeros.
    pub fn grads(&self) -> Vec<Option<Vec<f32>>> {
        self.leaves
            .iter()
            .map(|t| {
                t.requires_grad()
                    .then(|| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            })
            .collect()
    }

    pub fn into_updates(self) -> BnUpdates {
        self.updates
    }
}
