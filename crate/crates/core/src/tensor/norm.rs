use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// How batch normalization obtains its statistics.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with externally held running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-feature statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance, as used for normalization.
    pub var: Vec<T>,
    /// Number of values reduced per feature.
    pub count: usize,
}

impl<T: Scalar> BatchStats<T> {
    /// Exponential moving average update; the running variance tracks the
    /// unbiased estimate.
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T], momentum: T) {
        let m = T::from_f64(self.count as f64);
        let unbias = m / (m - T::one());
        let keep = T::one() - momentum;
        for (rm, &mu) in running_mean.iter_mut().zip(&self.mean) {
            *rm = keep * *rm + momentum * mu;
        }
        for (rv, &v) in running_var.iter_mut().zip(&self.var) {
            *rv = keep * *rv + momentum * v * unbias;
        }
    }
}

/// Batch normalization over axis 1 of `[n, c, ...]` with affine `gamma`/`beta`.
///
/// Each feature `c` is normalized as `(x - mean) / sqrt(var + 1e-5)` over the
/// batch and all trailing axes. In training mode the batch statistics are
/// returned so the caller can fold them into running statistics.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mode: BatchNormMode<'_, T>,
) -> Result<(Tensor<T>, Option<BatchStats<T>>)> {
    if x.ndim() < 2 {
        return Err(Error::Dimension(format!(
            "batch_norm: expected [n, c, ...], got {:?}",
            x.shape()
        )));
    }
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let s = x.numel() / (n * c);
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::Dimension(format!(
            "batch_norm: affine parameters must have {c} values"
        )));
    }
    let eps = T::from_f64(BN_EPS);
    let m = n * s;
    let idx = move |b: usize, ch: usize| (b * c + ch) * s;

    let (mean, var, stats) = match mode {
        BatchNormMode::Train => {
            if n < 2 {
                return Err(Error::DegenerateBatch(
                    "batch_norm in training mode needs at least 2 samples".into(),
                ));
            }
            let inv_m = T::one() / T::from_f64(m as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut acc = T::zero();
                for b in 0..n {
                    acc += x.data()[idx(b, ch)..idx(b, ch) + s].iter().copied().sum::<T>();
                }
                let mu = acc * inv_m;
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &x.data()[idx(b, ch)..idx(b, ch) + s] {
                        sq += (v - mu) * (v - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = sq * inv_m;
            }
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                count: m,
            };
            (mean, var, Some(stats))
        }
        BatchNormMode::Eval { mean, var } => {
            if mean.len() != c || var.len() != c {
                return Err(Error::Dimension(format!(
                    "batch_norm: running statistics must have {c} values"
                )));
            }
            (mean.to_vec(), var.to_vec(), None)
        }
    };
    let training = stats.is_some();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = vec![T::zero(); x.numel()];
    let mut out = vec![T::zero(); x.numel()];
    for b in 0..n {
        for ch in 0..c {
            let r = idx(b, ch)..idx(b, ch) + s;
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for ((xh, o), &v) in xhat[r.clone()]
                .iter_mut()
                .zip(&mut out[r.clone()])
                .zip(&x.data()[r])
            {
                *xh = (v - mean[ch]) * inv_std[ch];
                *o = g * *xh + bt;
            }
        }
    }

    let gamma_c = gamma.clone();
    let y = Tensor::from_op(
        "batch_norm",
        out,
        x.shape(),
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |dy| {
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let r = idx(b, ch)..idx(b, ch) + s;
                    for (&g, &xh) in dy[r.clone()].iter().zip(&xhat[r]) {
                        dgamma[ch] += g * xh;
                        dbeta[ch] += g;
                    }
                }
            }
            let mut dx = vec![T::zero(); dy.len()];
            let mf = T::from_f64(m as f64);
            for ch in 0..c {
                let scale = gamma_c.data()[ch] * inv_std[ch];
                for b in 0..n {
                    let r = idx(b, ch)..idx(b, ch) + s;
                    for ((d, &g), &xh) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xhat[r])
                    {
                        *d = if training {
                            scale * (mf * g - dbeta[ch] - xh * dgamma[ch]) / mf
                        } else {
                            scale * g
                        };
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    )?;
    Ok((y, stats))
}
