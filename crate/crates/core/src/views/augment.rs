//! Spatial and spectral augmentations of `p x p x C` patches.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Patch;
use crate::error::{Error, Result};

pub const DEFAULT_PROBABILITY: f64 = 0.75;

/// One augmentation and its magnitude parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    /// Mirror rows or columns (axis chosen uniformly).
    Flip,
    /// Rotate the spatial axes by 90, 180 or 270 degrees.
    Rotate,
    /// Random sub-window resized back to `p x p` bilinearly.
    ResizedCrop {
        min_area: f64,
        min_aspect: f64,
        max_aspect: f64,
    },
    /// Multiply every value by `s ~ U[min, max]`.
    Scaling { min: f64, max: f64 },
    /// Add i.i.d. `N(0, sigma^2)` to every value.
    GaussianNoise { sigma: f64 },
    /// Zero a random fraction `~ U[0, max_fraction]` of the bands.
    BandDrop { max_fraction: f64 },
    /// Zero a random fraction `~ U[0, max_fraction]` of the spatial positions.
    PixelRemoval { max_fraction: f64 },
    /// Swap `k ~ U{1..ceil(max_pair_fraction * C)}` disjoint adjacent band pairs.
    BandSwap { max_pair_fraction: f64 },
    /// Add one bias `b ~ N(0, sigma^2)` to the whole patch.
    Translation { sigma: f64 },
}

impl Transform {
    pub const NAMES: [&'static str; 9] = [
        "flip",
        "rotate",
        "resized_crop",
        "scaling",
        "gaussian_noise",
        "band_drop",
        "pixel_removal",
        "band_swap",
        "translation",
    ];

    /// The transform with its default magnitudes.
    pub fn by_name(name: &str) -> Result<Self> {
        Self::from_params(name, &BTreeMap::new())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Transform::Flip => "flip",
            Transform::Rotate => "rotate",
            Transform::ResizedCrop { .. } => "resized_crop",
            Transform::Scaling { .. } => "scaling",
            Transform::GaussianNoise { .. } => "gaussian_noise",
            Transform::BandDrop { .. } => "band_drop",
            Transform::PixelRemoval { .. } => "pixel_removal",
            Transform::BandSwap { .. } => "band_swap",
            Transform::Translation { .. } => "translation",
        }
    }

    pub fn is_spatial(&self) -> bool {
        matches!(
            self,
            Transform::Flip | Transform::Rotate | Transform::ResizedCrop { .. }
        )
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match *self {
            Transform::Flip | Transform::Rotate => vec![],
            Transform::ResizedCrop {
                min_area,
                min_aspect,
                max_aspect,
            } => vec![
                ("min_area", min_area),
                ("min_aspect", min_aspect),
                ("max_aspect", max_aspect),
            ],
            Transform::Scaling { min, max } => vec![("min", min), ("max", max)],
            Transform::GaussianNoise { sigma } | Transform::Translation { sigma } => {
                vec![("sigma", sigma)]
            }
            Transform::BandDrop { max_fraction } | Transform::PixelRemoval { max_fraction } => {
                vec![("max_fraction", max_fraction)]
            }
            Transform::BandSwap { max_pair_fraction } => {
                vec![("max_pair_fraction", max_pair_fraction)]
            }
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn from_params(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
        let t = match name {
            "flip" => Transform::Flip,
            "rotate" => Transform::Rotate,
            "resized_crop" => Transform::ResizedCrop {
                min_area: get("min_area", 0.5),
                min_aspect: get("min_aspect", 3.0 / 4.0),
                max_aspect: get("max_aspect", 4.0 / 3.0),
            },
            "scaling" => Transform::Scaling {
                min: get("min", 0.9),
                max: get("max", 1.1),
            },
            "gaussian_noise" => Transform::GaussianNoise {
                sigma: get("sigma", 0.1),
            },
            "band_drop" => Transform::BandDrop {
                max_fraction: get("max_fraction", 0.1),
            },
            "pixel_removal" => Transform::PixelRemoval {
                max_fraction: get("max_fraction", 0.1),
            },
            "band_swap" => Transform::BandSwap {
                max_pair_fraction: get("max_pair_fraction", 0.05),
            },
            "translation" => Transform::Translation {
                sigma: get("sigma", 0.1),
            },
            other => {
                return Err(Error::Config(format!("unknown transform `{other}`")));
            }
        };
        let known = t.params();
        if let Some(unknown) = params.keys().find(|k| !known.contains_key(*k)) {
            return Err(Error::Config(format!(
                "transform `{name}` has no parameter `{unknown}`"
            )));
        }
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Transform::Flip | Transform::Rotate => true,
            Transform::ResizedCrop {
                min_area,
                min_aspect,
                max_aspect,
            } => min_area > 0.0 && min_area <= 1.0 && min_aspect > 0.0 && min_aspect <= max_aspect,
            Transform::Scaling { min, max } => min.is_finite() && max.is_finite() && min <= max,
            Transform::GaussianNoise { sigma } | Transform::Translation { sigma } => sigma >= 0.0,
            Transform::BandDrop { max_fraction } | Transform::PixelRemoval { max_fraction } => {
                (0.0..=1.0).contains(&max_fraction)
            }
            Transform::BandSwap { max_pair_fraction } => (0.0..=1.0).contains(&max_pair_fraction),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid parameters for `{}`: {:?}",
                self.name(),
                self.params()
            )))
        }
    }
}

pub fn flip_horizontal(patch: &Patch) -> Patch {
    let p = patch.size;
    let mut out = patch.clone();
    for r in 0..p {
        for c in 0..p {
            out.spectrum_mut(r, c).copy_from_slice(patch.spectrum(r, p - 1 - c));
        }
    }
    out
}

pub fn flip_vertical(patch: &Patch) -> Patch {
    let p = patch.size;
    let mut out = patch.clone();
    for r in 0..p {
        for c in 0..p {
            out.spectrum_mut(r, c).copy_from_slice(patch.spectrum(p - 1 - r, c));
        }
    }
    out
}

/// Counter-clockwise rotation by `k * 90` degrees.
pub fn rotate90(patch: &Patch, k: usize) -> Patch {
    let p = patch.size;
    let mut out = patch.clone();
    for r in 0..p {
        for c in 0..p {
            let (sr, sc) = match k % 4 {
                0 => (r, c),
                1 => (c, p - 1 - r),
                2 => (p - 1 - r, p - 1 - c),
                _ => (p - 1 - c, r),
            };
            out.spectrum_mut(r, c).copy_from_slice(patch.spectrum(sr, sc));
        }
    }
    out
}

/// Crop window in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
}

/// Bilinear resampling of `window` back onto a `p x p` grid (half-pixel
/// centers, edge clamped). The full window reproduces the input.
pub fn resized_crop(patch: &Patch, window: CropWindow) -> Patch {
    let p = patch.size;
    let last = (p - 1) as f64;
    let mut out = patch.clone();
    let sample = |i: usize, start: f64, extent: f64| -> (usize, usize, f32) {
        let y = (start + (i as f64 + 0.5) * extent / p as f64 - 0.5).clamp(0.0, last);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(p - 1);
        (y0, y1, (y - y0 as f64) as f32)
    };
    for r in 0..p {
        let (r0, r1, fy) = sample(r, window.top, window.height);
        for c in 0..p {
            let (c0, c1, fx) = sample(c, window.left, window.width);
            let dst = out.spectrum_mut(r, c);
            for (b, d) in dst.iter_mut().enumerate() {
                let v00 = patch.spectrum(r0, c0)[b];
                let v01 = patch.spectrum(r0, c1)[b];
                let v10 = patch.spectrum(r1, c0)[b];
                let v11 = patch.spectrum(r1, c1)[b];
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                *d = top + (bottom - top) * fy;
            }
        }
    }
    out
}

fn sample_crop_window<R: Rng + ?Sized>(
    p: usize,
    min_area: f64,
    min_aspect: f64,
    max_aspect: f64,
    rng: &mut R,
) -> CropWindow {
    let side = p as f64;
    let (lo, hi) = (min_aspect.ln(), max_aspect.ln());
    for _ in 0..10 {
        let area = rng.random_range(min_area..=1.0) * side * side;
        let aspect = if hi > lo {
            rng.random_range(lo..=hi).exp()
        } else {
            min_aspect
        };
        let w = (area * aspect).sqrt();
        let h = (area / aspect).sqrt();
        if w <= side && h <= side {
            return CropWindow {
                top: rng.random_range(0.0..=side - h),
                left: rng.random_range(0.0..=side - w),
                height: h,
                width: w,
            };
        }
    }
    CropWindow {
        top: 0.0,
        left: 0.0,
        height: side,
        width: side,
    }
}

/// Swaps the listed band pairs at every spatial position.
pub fn swap_bands(patch: &Patch, pairs: &[(usize, usize)]) -> Patch {
    let mut out = patch.clone();
    for px in out.data.chunks_exact_mut(patch.bands) {
        for &(i, j) in pairs {
            px.swap(i, j);
        }
    }
    out
}

/// `k ~ U{1..ceil(fraction * C)}` disjoint pairs `(i, i + 1)`.
pub fn sample_band_swap_pairs<R: Rng + ?Sized>(
    bands: usize,
    max_pair_fraction: f64,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    if bands < 2 {
        return Vec::new();
    }
    let max_k = ((max_pair_fraction * bands as f64).ceil() as usize).clamp(1, bands / 2);
    let k = rng.random_range(1..=max_k);
    let mut starts: Vec<usize> = (0..bands - 1).collect();
    starts.shuffle(rng);
    let mut used = vec![false; bands];
    let mut pairs = Vec::with_capacity(k);
    for i in starts {
        if pairs.len() == k {
            break;
        }
        if !used[i] && !used[i + 1] {
            used[i] = true;
            used[i + 1] = true;
            pairs.push((i, i + 1));
        }
    }
    pairs
}

/// Applies a spatial transform; fails for single-pixel inputs.
pub fn apply_spatial<R: Rng + ?Sized>(patch: &Patch, t: &Transform, rng: &mut R) -> Result<Patch> {
    if patch.size < 2 {
        return Err(Error::Config(format!(
            "spatial transform `{}` needs a patch larger than 1x1",
            t.name()
        )));
    }
    Ok(match *t {
        Transform::Flip => {
            if rng.random_bool(0.5) {
                flip_horizontal(patch)
            } else {
                flip_vertical(patch)
            }
        }
        Transform::Rotate => rotate90(patch, rng.random_range(1..=3)),
        Transform::ResizedCrop {
            min_area,
            min_aspect,
            max_aspect,
        } => {
            let window = sample_crop_window(patch.size, min_area, min_aspect, max_aspect, rng);
            resized_crop(patch, window)
        }
        _ => {
            return Err(Error::Config(format!("`{}` is not a spatial transform", t.name())));
        }
    })
}

fn zero_positions(patch: &mut Patch, positions: &[usize]) {
    for &i in positions {
        patch.data[i * patch.bands..(i + 1) * patch.bands].fill(0.0);
    }
}

/// Applies a spectral transform (valid for any patch size, including pixels).
pub fn apply_spectral<R: Rng + ?Sized>(patch: &Patch, t: &Transform, rng: &mut R) -> Result<Patch> {
    let mut out = patch.clone();
    match *t {
        Transform::Scaling { min, max } => {
            let s = if max > min { rng.random_range(min..=max) } else { min } as f32;
            out.data.iter_mut().for_each(|v| *v *= s);
        }
        Transform::GaussianNoise { sigma } => {
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("sigma validated");
                out.data.iter_mut().for_each(|v| *v += normal.sample(rng) as f32);
            }
        }
        Transform::BandDrop { max_fraction } => {
            let fraction = rng.random_range(0.0..=max_fraction);
            let count = (fraction * patch.bands as f64).round() as usize;
            let dropped = index::sample(rng, patch.bands, count.min(patch.bands));
            for px in out.data.chunks_exact_mut(patch.bands) {
                dropped.iter().for_each(|b| px[b] = 0.0);
            }
        }
        Transform::PixelRemoval { max_fraction } => {
            let positions = patch.size * patch.size;
            if positions > 1 {
                let fraction = rng.random_range(0.0..=max_fraction);
                let count = ((fraction * positions as f64).round() as usize).min(positions);
                let removed = index::sample(rng, positions, count).into_vec();
                zero_positions(&mut out, &removed);
            }
        }
        Transform::BandSwap { max_pair_fraction } => {
            let pairs = sample_band_swap_pairs(patch.bands, max_pair_fraction, rng);
            out = swap_bands(patch, &pairs);
        }
        Transform::Translation { sigma } => {
            if sigma > 0.0 {
                let b = Normal::new(0.0, sigma).expect("sigma validated").sample(rng) as f32;
                out.data.iter_mut().for_each(|v| *v += b);
            }
        }
        _ => {
            return Err(Error::Config(format!("`{}` is not a spectral transform", t.name())));
        }
    }
    Ok(out)
}

pub fn apply_transform<R: Rng + ?Sized>(patch: &Patch, t: &Transform, rng: &mut R) -> Result<Patch> {
    if t.is_spatial() {
        apply_spatial(patch, t, rng)
    } else {
        apply_spectral(patch, t, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationStep {
    pub transform: Transform,
    pub probability: f64,
}

/// Serialized form of one step: `{name, params, probability}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformEntry {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default = "default_probability")]
    pub probability: f64,
}

fn default_probability() -> f64 {
    DEFAULT_PROBABILITY
}

/// Ordered augmentation pipeline; the order is fixed at construction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<TransformEntry>", into = "Vec<TransformEntry>")]
pub struct AugmentationSpec {
    steps: Vec<AugmentationStep>,
}

impl AugmentationSpec {
    pub fn new(steps: Vec<AugmentationStep>) -> Result<Self> {
        for s in &steps {
            if !(0.0..=1.0).contains(&s.probability) {
                return Err(Error::Config(format!(
                    "probability of `{}` must lie in [0, 1], got {}",
                    s.transform.name(),
                    s.probability
                )));
            }
            s.transform.validate()?;
        }
        Ok(AugmentationSpec { steps })
    }

    /// No augmentation.
    pub fn identity() -> Self {
        AugmentationSpec::default()
    }

    /// Default-magnitude transforms, each fired with `probability`.
    pub fn from_names(names: &[&str], probability: f64) -> Result<Self> {
        let steps = names
            .iter()
            .map(|n| {
                Ok(AugmentationStep {
                    transform: Transform::by_name(n)?,
                    probability,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(steps)
    }

    pub fn steps(&self) -> &[AugmentationStep] {
        &self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn has_spatial(&self) -> bool {
        self.steps.iter().any(|s| s.transform.is_spatial())
    }

    pub fn check_patch_size(&self, p: usize) -> Result<()> {
        if p < 2 {
            if let Some(s) = self.steps.iter().find(|s| s.transform.is_spatial()) {
                return Err(Error::Config(format!(
                    "spatial transform `{}` cannot be applied to single pixels",
                    s.transform.name()
                )));
            }
        }
        Ok(())
    }

    /// Runs every step in order, each with its own Bernoulli draw.
    pub fn apply<R: Rng + ?Sized>(&self, mut patch: Patch, rng: &mut R) -> Result<Patch> {
        for step in &self.steps {
            if rng.random::<f64>() < step.probability {
                patch = apply_transform(&patch, &step.transform, rng)?;
            }
        }
        Ok(patch)
    }
}

impl TryFrom<Vec<TransformEntry>> for AugmentationSpec {
    type Error = Error;

    fn try_from(entries: Vec<TransformEntry>) -> Result<Self> {
        let steps = entries
            .into_iter()
            .map(|e| {
                Ok(AugmentationStep {
                    transform: Transform::from_params(&e.name, &e.params)?,
                    probability: e.probability,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        AugmentationSpec::new(steps)
    }
}

impl From<AugmentationSpec> for Vec<TransformEntry> {
    fn from(spec: AugmentationSpec) -> Self {
        spec.steps
            .into_iter()
            .map(|s| TransformEntry {
                name: s.transform.name().to_string(),
                params: s.transform.params(),
                probability: s.probability,
            })
            .collect()
    }
}
