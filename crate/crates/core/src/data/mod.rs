//! Hyperspectral scenes, label maps, patch extraction and few-shot splits.

mod io;
mod split;
mod synth;

pub use io::{load_label_map, load_scene, load_scene_with_labels, payload_path, write_label_map, write_scene};
pub use split::{sample_few_shot, FewShotSplit, LabeledCoord};
pub use synth::{generate_synthetic_scene, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `height x width x bands` reflectance raster.
///
/// Values are held pixel-interleaved (`[row][col][band]`) so that spectra
/// and patches are contiguous reads; the on-disk layout is band-sequential.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
    wavelengths: Option<Vec<f64>>,
}

impl Scene {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        values: Vec<f32>,
        wavelengths: Option<Vec<f64>>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Consistency(format!(
                "scene extents must be positive, got {height}x{width}x{bands}"
            )));
        }
        if values.len() != height * width * bands {
            return Err(Error::Consistency(format!(
                "{} values for a {height}x{width}x{bands} scene",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Consistency("scene contains non-finite values".into()));
        }
        if let Some(w) = &wavelengths {
            if w.len() != bands {
                return Err(Error::Consistency(format!(
                    "{} wavelengths for {bands} bands",
                    w.len()
                )));
            }
            if w.windows(2).any(|p| p[1] <= p[0]) {
                return Err(Error::Consistency(
                    "wavelengths must be strictly increasing".into(),
                ));
            }
        }
        Ok(Scene {
            height,
            width,
            bands,
            values,
            wavelengths,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    /// Pixel-interleaved values.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.values[start..start + self.bands]
    }

    pub fn contains(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }
}

/// Per-pixel class labels; `0` is unlabeled, `1..=G` are classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Consistency(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    /// Number of declared classes (largest label present).
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    /// Labeled pixels per class, index 0 holding class 1.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in self.labels.iter().filter(|&&l| l > 0) {
            counts[l as usize - 1] += 1;
        }
        counts
    }

    pub fn matches(&self, scene: &Scene) -> Result<()> {
        if self.height != scene.height() || self.width != scene.width() {
            return Err(Error::Consistency(format!(
                "label map is {}x{} but scene is {}x{}",
                self.height,
                self.width,
                scene.height(),
                scene.width()
            )));
        }
        Ok(())
    }
}

/// `size x size x bands` window of a scene, stored `[row][col][band]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub bands: usize,
    pub data: Vec<f32>,
}

impl Patch {
    pub fn new(size: usize, bands: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), size * size * bands);
        Patch { size, bands, data }
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.size + col) * self.bands;
        &self.data[start..start + self.bands]
    }

    pub fn spectrum_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let start = (row * self.size + col) * self.bands;
        &mut self.data[start..start + self.bands]
    }

    pub fn center(&self) -> &[f32] {
        self.spectrum(self.size / 2, self.size / 2)
    }

    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        Tensor::new(self.data.clone(), &[self.size, self.size, self.bands])
    }
}

/// Result of [`normalize_per_band`].
#[derive(Debug, Clone)]
pub struct Normalized {
    pub scene: Scene,
    /// Bands with zero variance; they are returned as all zeros.
    pub constant_bands: Vec<usize>,
}

/// Standardizes every band to zero mean and unit (population) variance over
/// all pixels.
pub fn normalize_per_band(scene: &Scene) -> Normalized {
    let c = scene.bands;
    let n = (scene.height * scene.width) as f64;
    let mut mean = vec![0.0f64; c];
    for px in scene.values.chunks_exact(c) {
        mean.iter_mut().zip(px).for_each(|(m, &v)| *m += f64::from(v));
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; c];
    for px in scene.values.chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
            let d = f64::from(v) - m;
            *s += d * d;
        }
    }
    let std: Vec<f64> = var.iter().map(|&s| (s / n).sqrt()).collect();
    let constant_bands: Vec<usize> = std
        .iter()
        .enumerate()
        .filter(|&(b, &s)| s <= 1e-12 * mean[b].abs().max(1.0))
        .map(|(b, _)| b)
        .collect();
    if !constant_bands.is_empty() {
        log::warn!("zero-variance bands set to 0: {constant_bands:?}");
    }
    let values = scene
        .values
        .chunks_exact(c)
        .flat_map(|px| {
            px.iter().enumerate().map(|(b, &v)| {
                if constant_bands.contains(&b) {
                    0.0
                } else {
                    ((f64::from(v) - mean[b]) / std[b]) as f32
                }
            })
        })
        .collect();
    Normalized {
        scene: Scene {
            height: scene.height,
            width: scene.width,
            bands: scene.bands,
            values,
            wavelengths: scene.wavelengths.clone(),
        },
        constant_bands,
    }
}

/// Reflects an index into `[0, len)` without repeating the border sample
/// (`-1 -> 1`, `len -> len - 2`).
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// `p x p` patch centered on `(row, col)`, mirror-reflected at the scene border.
pub fn extract_patch(scene: &Scene, row: usize, col: usize, p: usize) -> Result<Patch> {
    if p == 0 || p % 2 == 0 {
        return Err(Error::Config(format!("patch size must be odd, got {p}")));
    }
    if row >= scene.height || col >= scene.width {
        return Err(Error::Config(format!(
            "patch center ({row}, {col}) outside {}x{} scene",
            scene.height, scene.width
        )));
    }
    let half = (p / 2) as isize;
    let c = scene.bands;
    let mut data = Vec::with_capacity(p * p * c);
    for dr in -half..=half {
        let r = reflect_index(row as isize + dr, scene.height);
        for dc in -half..=half {
            let cc = reflect_index(col as isize + dc, scene.width);
            data.extend_from_slice(scene.pixel(r, cc));
        }
    }
    Ok(Patch::new(p, c, data))
}
