//! Two-view generation: spatial pair sampling followed by per-branch
//! stochastic augmentation.

mod augment;
mod pairs;

pub use augment::{
    apply_spatial, apply_spectral, apply_transform, flip_horizontal, flip_vertical,
    resized_crop, rotate90, sample_band_swap_pairs, swap_bands, AugmentationSpec,
    AugmentationStep, CropWindow, Transform, TransformEntry, DEFAULT_PROBABILITY,
};
pub use pairs::{
    admissible_offsets, neighbor_candidates, overlap_fraction, sample_neighbor_pixel_pair,
    sample_overlapping_patch_pair, PairMode, PairSamplingPolicy, PatchPair, PixelPair,
};

use rand::Rng;

use crate::data::{extract_patch, Patch, Scene};
use crate::error::Result;

/// Two augmented views of one spatial sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_a: Patch,
    pub view_b: Patch,
    pub source: (usize, usize),
    /// Center of the second element before augmentation.
    pub partner: (usize, usize),
}

/// Samples a pair around `(row, col)` according to `policy`, then applies
/// `spec_a` to the first element and `spec_b` to the second.
///
/// Every step of a spec fires independently with its own probability, in
/// the spec's order.
#[allow(clippy::too_many_arguments)]
pub fn make_views<R: Rng + ?Sized>(
    scene: &Scene,
    row: usize,
    col: usize,
    patch_size: usize,
    policy: &PairSamplingPolicy,
    spec_a: &AugmentationSpec,
    spec_b: &AugmentationSpec,
    rng: &mut R,
) -> Result<ViewPair> {
    policy.validate()?;
    spec_a.check_patch_size(patch_size)?;
    spec_b.check_patch_size(patch_size)?;

    let (a, b, partner) = match policy.mode {
        PairMode::SameInput => {
            let x = extract_patch(scene, row, col, patch_size)?;
            (x.clone(), x, (row, col))
        }
        PairMode::OverlappingPatches => {
            let pair = sample_overlapping_patch_pair(
                scene,
                row,
                col,
                patch_size,
                policy.min_overlap_fraction,
                rng,
            )?;
            let partner = (
                (row as isize + pair.offset.0) as usize,
                (col as isize + pair.offset.1) as usize,
            );
            (pair.first, pair.second, partner)
        }
        PairMode::NeighborPixels => {
            let (nr, nc) = pairs::sample_neighbor(scene, row, col, policy.neighborhood_size, rng);
            (
                extract_patch(scene, row, col, patch_size)?,
                extract_patch(scene, nr, nc, patch_size)?,
                (nr, nc),
            )
        }
    };
    Ok(ViewPair {
        view_a: spec_a.apply(a, rng)?,
        view_b: spec_b.apply(b, rng)?,
        source: (row, col),
        partner,
    })
}
