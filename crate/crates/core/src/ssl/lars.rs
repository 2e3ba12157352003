use std::f64::consts::PI;

use super::BarlowTwinsConfig;
use crate::error::{Error, Result};
use crate::models::Param;

/// Layer-wise trust ratio `trust * |w| / (|g| + wd * |w| + eps)`, or 1 when
/// either norm vanishes.
pub fn lars_local_lr(w_norm: f64, g_norm: f64, weight_decay: f64, trust: f64, eps: f64) -> f64 {
    if w_norm > 0.0 && g_norm > 0.0 {
        trust * w_norm / (g_norm + weight_decay * w_norm + eps)
    } else {
        1.0
    }
}

/// Linear warmup over `warmup_steps`, then cosine decay to zero at `total_steps`.
pub fn learning_rate_at(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> f64 {
    if step < warmup_steps {
        return base_lr * (step + 1) as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps).max(1);
    let t = ((step - warmup_steps) as f64 / span as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (PI * t).cos())
}

/// LARS with heavy-ball momentum. Weights get layer-wise adaptation and weight
/// decay; biases and norm affines get neither and a scaled learning rate.
#[derive(Debug, Clone)]
pub struct Lars {
    momentum: f64,
    weight_decay: f64,
    trust: f64,
    eps: f64,
    bias_lr_scale: f64,
    velocity: Vec<Vec<f32>>,
}

impl Lars {
    pub fn new(config: &BarlowTwinsConfig) -> Self {
        Lars {
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            trust: config.lars_trust_coefficient,
            eps: config.lars_eps,
            bias_lr_scale: config.bias_lr_scale,
            velocity: Vec::new(),
        }
    }

    /// Applies one update with global learning rate `lr`. Entries of `grads`
    /// that are `None` leave their parameter untouched.
    pub fn step(&mut self, params: &mut [Param], grads: &[Option<Vec<f32>>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of `{}` at index {i} is {}",
                        p.name, g[i]
                    )));
                }
            }
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        let m = self.momentum as f32;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let Some(g) = g else { continue };
            let (scale, wd) = if p.is_weight {
                let w_norm = norm(&p.value);
                let g_norm = norm(g);
                let local = lars_local_lr(w_norm, g_norm, self.weight_decay, self.trust, self.eps);
                (local, self.weight_decay as f32)
            } else {
                (self.bias_lr_scale, 0.0)
            };
            let scale = scale as f32;
            let step = lr as f32;
            for ((w, &gi), vi) in p.value.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = m * *vi + scale * (gi + wd * *w);
                *w -= step * *vi;
            }
        }
        Ok(())
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}
