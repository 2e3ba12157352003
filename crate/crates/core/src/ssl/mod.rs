//! Barlow-Twins objective and the LARS pre-training loop.

mod lars;
mod pretrain;

pub use lars::{lars_local_lr, learning_rate_at, Lars};
pub use pretrain::{
    correlation_on_batch, pretrain, write_loss_history, PretrainReport, ViewSetup,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Guard added under the square roots of the correlation denominators.
pub const CORRELATION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarlowTwinsConfig {
    /// Weight of the off-diagonal (redundancy) term.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    /// Learning-rate multiplier for biases and norm affines, which bypass
    /// the layer-wise adaptation.
    pub bias_lr_scale: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub lars_trust_coefficient: f64,
    pub lars_eps: f64,
    pub warmup_epochs: usize,
    /// Mean-center each column before correlating.
    pub centered: bool,
    /// Abort when an epoch's mean loss exceeds this multiple of the first.
    pub divergence_factor: f64,
    /// Save a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for BarlowTwinsConfig {
    fn default() -> Self {
        BarlowTwinsConfig {
            lambda: 0.005,
            batch_size: 256,
            epochs: 100,
            base_lr: 0.2,
            bias_lr_scale: 0.024,
            weight_decay: 1.5e-6,
            momentum: 0.9,
            lars_trust_coefficient: 0.001,
            lars_eps: 1e-8,
            warmup_epochs: 2,
            centered: true,
            divergence_factor: 10.0,
            checkpoint_every: 0,
        }
    }
}

impl BarlowTwinsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.base_lr >= 0.0) || !(self.bias_lr_scale >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rates and weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.lars_trust_coefficient > 0.0) || !(self.lars_eps > 0.0) {
            return bad("LARS trust coefficient and eps must be positive");
        }
        if !(self.divergence_factor > 1.0) {
            return bad("divergence_factor must exceed 1");
        }
        Ok(())
    }
}

/// `D x D` cross-correlation between two `batch x D` branch outputs, taken
/// along the batch axis. Entry `(i, j)` correlates column `i` of `za` with
/// column `j` of `zb`.
pub fn cross_correlation<T: Scalar>(za: &Tensor<T>, zb: &Tensor<T>, centered: bool) -> Result<Tensor<T>> {
    if za.ndim() != 2 || za.shape() != zb.shape() {
        return Err(Error::Dimension(format!(
            "cross_correlation: branch outputs must be equal [batch, D] matrices, got {:?} and {:?}",
            za.shape(),
            zb.shape()
        )));
    }
    if za.shape()[0] < 2 {
        return Err(Error::DegenerateBatch(
            "cross_correlation needs at least 2 samples".into(),
        ));
    }
    let eps = T::from_f64(CORRELATION_EPS);
    let prep = |z: &Tensor<T>| -> Result<Tensor<T>> {
        if centered {
            z.center_columns()?.normalize_columns(eps)
        } else {
            z.normalize_columns(eps)
        }
    };
    prep(za)?.transpose()?.matmul(&prep(zb)?)
}

/// `sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2` for a square `C`.
pub fn barlow_twins_loss<T: Scalar>(c: &Tensor<T>, lambda: f64) -> Result<Tensor<T>> {
    let d = match *c.shape() {
        [r, k] if r == k => r,
        _ => {
            return Err(Error::Dimension(format!(
                "barlow_twins_loss: expected a square matrix, got {:?}",
                c.shape()
            )))
        }
    };
    let lam = T::from_f64(lambda);
    let two = T::from_f64(2.0);
    let mut on = T::zero();
    let mut off = T::zero();
    for (idx, &v) in c.data().iter().enumerate() {
        if idx / d == idx % d {
            on += (T::one() - v) * (T::one() - v);
        } else {
            off += v * v;
        }
    }
    let values = c.to_vec();
    Tensor::from_op(
        "barlow_twins_loss",
        vec![on + lam * off],
        &[1],
        vec![c.clone()],
        Box::new(move |g| {
            let g = g[0];
            let dc = values
                .iter()
                .enumerate()
                .map(|(idx, &v)| {
                    if idx / d == idx % d {
                        -two * (T::one() - v) * g
                    } else {
                        two * lam * v * g
                    }
                })
                .collect();
            vec![Some(dc)]
        }),
    )
}

/// Mean absolute off-diagonal entry of a square matrix.
pub fn mean_abs_off_diagonal<T: Scalar>(c: &Tensor<T>) -> f64 {
    let d = c.shape()[0];
    if d < 2 {
        return 0.0;
    }
    let total: f64 = c
        .data()
        .iter()
        .enumerate()
        .filter(|(idx, _)| idx / d != idx % d)
        .map(|(_, &v)| Scalar::to_f64(v).abs())
        .sum();
    total / (d * (d - 1)) as f64
}

#[cfg(test)]
mod tests;
