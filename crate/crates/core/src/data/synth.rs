//! Synthetic scenes with smooth class regions and Gaussian-bump spectra.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{reflect_index, LabelMap, Scene};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const LAYOUT_ATTEMPTS: usize = 100;
const MIN_CLASS_FRACTION: f64 = 0.01;
const BUMPS_PER_SIGNATURE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub noise_sigma: f64,
    /// Standard deviation, in pixels, of the blur that shapes class regions.
    pub blob_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 6,
            height: 64,
            width: 64,
            bands: 32,
            noise_sigma: 0.5,
            blob_scale: 4.0,
            seed: 7,
        }
    }
}

fn signature(bands: usize, rng: &mut Rng) -> Vec<f64> {
    let c = bands as f64;
    let baseline = rng.random_range(0.1..0.3);
    let bumps: Vec<(f64, f64, f64)> = (0..BUMPS_PER_SIGNATURE)
        .map(|_| {
            let amp = rng.random_range(0.2..1.0);
            let center = rng.random_range(0.0..c);
            let width = rng.random_range((c / 12.0).max(1.0)..(c / 4.0).max(1.5));
            (amp, center, width)
        })
        .collect();
    (0..bands)
        .map(|b| {
            let x = b as f64;
            baseline
                + bumps
                    .iter()
                    .map(|&(a, mu, w)| a * (-(x - mu).powi(2) / (2.0 * w * w)).exp())
                    .sum::<f64>()
        })
        .collect()
}

/// Separable Gaussian blur with mirror boundaries.
fn blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return field.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = (-radius..=radius)
                .zip(&kernel)
                .map(|(d, k)| k * field[r * w + reflect_index(c as isize + d, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = (-radius..=radius)
                .zip(&kernel)
                .map(|(d, k)| k * tmp[reflect_index(r as isize + d, h) * w + c])
                .sum();
        }
    }
    out
}

fn layout(cfg: &SynthConfig, rng: &mut Rng) -> Vec<u16> {
    let (h, w) = (cfg.height, cfg.width);
    let fields: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            let noise: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
            blur(&noise, h, w, cfg.blob_scale)
        })
        .collect();
    (0..h * w)
        .map(|i| {
            let mut best = 0;
            for g in 1..cfg.classes {
                if fields[g][i] > fields[best][i] {
                    best = g;
                }
            }
            best as u16 + 1
        })
        .collect()
}

/// Generates a labeled scene: `classes` random smooth spectral signatures
/// laid out as contiguous regions, plus i.i.d. Gaussian noise per value.
///
/// Every class covers at least 1% of the pixels; layouts are redrawn up to
/// 100 times before giving up.
pub fn generate_synthetic_scene(cfg: &SynthConfig) -> Result<(Scene, LabelMap)> {
    if cfg.classes < 2 {
        return Err(Error::Config(format!(
            "synthetic scene needs at least 2 classes, got {}",
            cfg.classes
        )));
    }
    if cfg.bands < 4 {
        return Err(Error::Config(format!(
            "synthetic scene needs at least 4 bands, got {}",
            cfg.bands
        )));
    }
    if cfg.height == 0 || cfg.width == 0 {
        return Err(Error::Config("synthetic scene extents must be positive".into()));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.blob_scale >= 0.0) {
        return Err(Error::Config(
            "noise_sigma and blob_scale must be non-negative".into(),
        ));
    }
    if cfg.classes > u16::MAX as usize {
        return Err(Error::Config("too many classes".into()));
    }

    let mut rng = rng::rng_for(cfg.seed, "synth");
    let signatures: Vec<Vec<f64>> = (0..cfg.classes).map(|_| signature(cfg.bands, &mut rng)).collect();

    let pixels = cfg.height * cfg.width;
    let min_count = ((MIN_CLASS_FRACTION * pixels as f64).ceil() as usize).max(1);
    let labels = (0..LAYOUT_ATTEMPTS)
        .map(|_| layout(cfg, &mut rng))
        .find(|labels| {
            let mut counts = vec![0usize; cfg.classes];
            labels.iter().for_each(|&l| counts[l as usize - 1] += 1);
            counts.iter().all(|&n| n >= min_count)
        })
        .ok_or_else(|| {
            Error::Generation(format!(
                "no layout with every class on >= {min_count} pixels after {LAYOUT_ATTEMPTS} attempts"
            ))
        })?;

    let noise = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::Config(format!("noise_sigma: {e}")))?;
    let mut values = Vec::with_capacity(pixels * cfg.bands);
    for &l in &labels {
        for &s in &signatures[l as usize - 1] {
            let v = if cfg.noise_sigma > 0.0 {
                s + noise.sample(&mut rng)
            } else {
                s
            };
            values.push(v as f32);
        }
    }
    let scene = Scene::new(cfg.height, cfg.width, cfg.bands, values, None)?;
    let labels = LabelMap::new(cfg.height, cfg.width, labels)?;
    Ok((scene, labels))
}
