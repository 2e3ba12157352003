use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabelMap;
use crate::error::{Error, Result};
use crate::rng;

/// A labeled pixel position; `class` is the 1-based label from the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledCoord {
    pub row: usize,
    pub col: usize,
    pub class: u16,
}

impl LabeledCoord {
    /// Zero-based class index used by classifiers.
    pub fn class_index(&self) -> usize {
        self.class as usize - 1
    }
}

/// K labeled training pixels per class; every other labeled pixel is test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub k: usize,
    pub seed: u64,
    pub num_classes: usize,
    pub train: Vec<LabeledCoord>,
    pub test: Vec<LabeledCoord>,
}

/// Draws `k` pixels per class uniformly without replacement.
///
/// Deterministic in `(labels, k, seed)`. Fails naming the first class that
/// has fewer than `k` labeled pixels.
pub fn sample_few_shot(labels: &LabelMap, k: usize, seed: u64) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(Error::Config("shots per class must be positive".into()));
    }
    let g = labels.num_classes();
    if g == 0 {
        return Err(Error::Split("label map has no labeled pixels".into()));
    }
    let mut per_class: Vec<Vec<LabeledCoord>> = vec![Vec::new(); g];
    for row in 0..labels.height() {
        for col in 0..labels.width() {
            let class = labels.get(row, col);
            if class > 0 {
                per_class[class as usize - 1].push(LabeledCoord { row, col, class });
            }
        }
    }
    let mut rng = rng::rng_for(seed, "few_shot");
    let mut train = Vec::with_capacity(g * k);
    let mut test = Vec::new();
    for (idx, mut coords) in per_class.into_iter().enumerate() {
        if coords.len() < k {
            return Err(Error::Split(format!(
                "class {} has {} labeled pixels, fewer than K = {k}",
                idx + 1,
                coords.len()
            )));
        }
        let (chosen, rest) = coords.partial_shuffle(&mut rng, k);
        train.extend_from_slice(chosen);
        test.extend_from_slice(rest);
    }
    test.sort_by_key(|c| (c.row, c.col));
    Ok(FewShotSplit {
        k,
        seed,
        num_classes: g,
        train,
        test,
    })
}
