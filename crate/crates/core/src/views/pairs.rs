use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{extract_patch, Patch, Scene};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Both branches start from the same patch.
    SameInput,
    /// The second patch is a spatially overlapping window.
    OverlappingPatches,
    /// The second sample is centered on a random neighboring pixel.
    NeighborPixels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSamplingPolicy {
    pub mode: PairMode,
    pub min_overlap_fraction: f64,
    pub neighborhood_size: usize,
}

impl Default for PairSamplingPolicy {
    fn default() -> Self {
        PairSamplingPolicy {
            mode: PairMode::OverlappingPatches,
            min_overlap_fraction: 0.5,
            neighborhood_size: 5,
        }
    }
}

impl PairSamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_overlap_fraction > 0.0 && self.min_overlap_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "min_overlap_fraction must lie in (0, 1], got {}",
                self.min_overlap_fraction
            )));
        }
        if self.neighborhood_size < 3 || self.neighborhood_size % 2 == 0 {
            return Err(Error::Config(format!(
                "neighborhood_size must be odd and >= 3, got {}",
                self.neighborhood_size
            )));
        }
        Ok(())
    }
}

/// Intersection area of two `p x p` windows offset by `(dr, dc)`, over `p^2`.
pub fn overlap_fraction(p: usize, dr: isize, dc: isize) -> f64 {
    let p = p as isize;
    let rows = (p - dr.abs()).max(0);
    let cols = (p - dc.abs()).max(0);
    (rows * cols) as f64 / (p * p) as f64
}

/// All center offsets whose windows overlap by at least `min_fraction`.
///
/// Always contains `(0, 0)`.
pub fn admissible_offsets(p: usize, min_fraction: f64) -> Vec<(isize, isize)> {
    let reach = p as isize - 1;
    let needed = min_fraction * (p * p) as f64;
    let mut out = Vec::new();
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let area = ((p as isize - dr.abs()) * (p as isize - dc.abs())) as f64;
            // compare areas, not fractions, so that exact ties are admitted
            if area + 1e-9 >= needed {
                out.push((dr, dc));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub first: Patch,
    pub second: Patch,
    /// Center of `second` minus center of `first`.
    pub offset: (isize, isize),
}

/// Draws a second center uniformly among admissible offsets that keep it
/// inside the scene, and returns both patches.
pub fn sample_overlapping_patch_pair<R: Rng + ?Sized>(
    scene: &Scene,
    row: usize,
    col: usize,
    p: usize,
    min_overlap_fraction: f64,
    rng: &mut R,
) -> Result<PatchPair> {
    let first = extract_patch(scene, row, col, p)?;
    let candidates: Vec<(isize, isize)> = admissible_offsets(p, min_overlap_fraction)
        .into_iter()
        .filter(|&(dr, dc)| scene.contains(row as isize + dr, col as isize + dc))
        .collect();
    let &offset = candidates.choose(rng).unwrap_or(&(0, 0));
    let second = if offset == (0, 0) {
        first.clone()
    } else {
        extract_patch(
            scene,
            (row as isize + offset.0) as usize,
            (col as isize + offset.1) as usize,
            p,
        )?
    };
    Ok(PatchPair {
        first,
        second,
        offset,
    })
}

/// In-bounds pixels of the `w x w` window around `(row, col)`, center excluded.
pub fn neighbor_candidates(
    height: usize,
    width: usize,
    row: usize,
    col: usize,
    w: usize,
) -> Vec<(usize, usize)> {
    let half = (w / 2) as isize;
    let mut out = Vec::new();
    for dr in -half..=half {
        for dc in -half..=half {
            let (r, c) = (row as isize + dr, col as isize + dc);
            if (dr, dc) != (0, 0) && r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width
            {
                out.push((r as usize, c as usize));
            }
        }
    }
    out
}

pub(crate) fn sample_neighbor<R: Rng + ?Sized>(
    scene: &Scene,
    row: usize,
    col: usize,
    w: usize,
    rng: &mut R,
) -> (usize, usize) {
    let candidates = neighbor_candidates(scene.height(), scene.width(), row, col, w);
    // a 1x1 scene has no neighbors; fall back to the pixel itself
    candidates.choose(rng).copied().unwrap_or((row, col))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelPair {
    pub first: Vec<f32>,
    pub second: Vec<f32>,
    pub neighbor: (usize, usize),
}

/// Spectrum at `(row, col)` and at a uniformly drawn neighbor within the
/// `neighborhood_size` Chebyshev window.
pub fn sample_neighbor_pixel_pair<R: Rng + ?Sized>(
    scene: &Scene,
    row: usize,
    col: usize,
    neighborhood_size: usize,
    rng: &mut R,
) -> Result<PixelPair> {
    if row >= scene.height() || col >= scene.width() {
        return Err(Error::Config(format!(
            "pixel ({row}, {col}) outside {}x{} scene",
            scene.height(),
            scene.width()
        )));
    }
    let neighbor = sample_neighbor(scene, row, col, neighborhood_size, rng);
    Ok(PixelPair {
        first: scene.pixel(row, col).to_vec(),
        second: scene.pixel(neighbor.0, neighbor.1).to_vec(),
        neighbor,
    })
}
