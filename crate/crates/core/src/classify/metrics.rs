use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `G x G` counts, rows = true class, columns = predicted class.
pub type Confusion = Vec<Vec<u64>>;

/// Builds a confusion matrix from 0-based class indices.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Confusion> {
    if truth.len() != predicted.len() {
        return Err(Error::Label(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::Label(format!(
                "class index out of range for {num_classes} classes"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn total(c: &Confusion) -> u64 {
    c.iter().flatten().sum()
}

/// `trace / total`; 0 for an empty matrix.
pub fn overall_accuracy(c: &Confusion) -> f64 {
    let n = total(c);
    if n == 0 {
        return 0.0;
    }
    let diag: u64 = (0..c.len()).map(|i| c[i][i]).sum();
    diag as f64 / n as f64
}

/// Expected agreement by chance, `sum_k row_k * col_k / total^2`.
pub fn chance_agreement(c: &Confusion) -> f64 {
    let n = total(c) as f64;
    if n == 0.0 {
        return 0.0;
    }
    (0..c.len())
        .map(|k| {
            let row: u64 = c[k].iter().sum();
            let col: u64 = c.iter().map(|r| r[k]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (n * n)
}

/// Cohen's kappa `(p_o - p_e) / (1 - p_e)`. When all mass sits in one
/// row and column (`p_e = 1`) the statistic is undefined and 0 is returned.
pub fn cohen_kappa(c: &Confusion) -> f64 {
    let pe = chance_agreement(c);
    if (1.0 - pe).abs() < 1e-15 {
        log::warn!("kappa undefined for a single-cell confusion matrix, reporting 0");
        return 0.0;
    }
    (overall_accuracy(c) - pe) / (1.0 - pe)
}

/// Recall of every class; classes absent from the truth get 0.
pub fn per_class_accuracy(c: &Confusion) -> Vec<f64> {
    c.iter()
        .enumerate()
        .map(|(i, row)| {
            let n: u64 = row.iter().sum();
            if n == 0 {
                0.0
            } else {
                row[i] as f64 / n as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub kappa: f64,
    pub per_class: Vec<f64>,
    pub confusion: Confusion,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub protocol: String,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion, n_train: usize, seed: u64, protocol: &str) -> Self {
        MetricsReport {
            oa: overall_accuracy(&confusion),
            kappa: cohen_kappa(&confusion),
            per_class: per_class_accuracy(&confusion),
            n_test: total(&confusion) as usize,
            confusion,
            n_train,
            seed,
            protocol: protocol.to_string(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Gray level of a label in exported maps: `round(label * 255 / G)`, so
/// unlabeled (0) is black and class `G` is white.
pub fn gray_level(label: u16, num_classes: usize) -> u8 {
    if num_classes == 0 {
        return 0;
    }
    ((f64::from(label) * 255.0 / num_classes as f64).round()).min(255.0) as u8
}

/// Writes a binary 8-bit PGM of a row-major label map.
pub fn write_pgm(path: &Path, height: usize, width: usize, labels: &[u16], num_classes: usize) -> Result<()> {
    if labels.len() != height * width {
        return Err(Error::Consistency(format!(
            "{} labels for a {height}x{width} map",
            labels.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(labels.iter().map(|&l| gray_level(l, num_classes)));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
