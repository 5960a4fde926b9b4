//! Dataset ingestion, standardization and client partitioning.

pub mod csv;
pub mod idx;
pub mod split;
pub mod synthetic;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;

pub use self::csv::{load_csv, CsvSchema};
pub use idx::{load_idx, load_idx_pair};
pub use split::{
    dirichlet_split, dirichlet_split_with, homogeneous_split, largest_remainder, split_dataset,
    uci_credit_fixed_split, DirichletSampler, ProportionSampler, ShardAssignment, SplitKind, UCI_CREDIT_LAYOUT,
    SplitSpec,
};
pub use synthetic::{gaussian_blobs, quadratic_clients, BlobSpec, QuadraticClients, QuadraticLoss, QuadraticSpec};

/// Per-feature affine standardization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Population statistics of each column; constant columns get std 1.
    pub fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.mean_axis(Axis(0)).map_or_else(|| vec![0.0; x.ncols()], |m| m.to_vec());
        let std = (0..x.ncols())
            .map(|j| {
                let var = x.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        FeatureStats { mean, std }
    }

    /// Identity statistics for `dim` features.
    pub fn identity(dim: usize) -> Self {
        FeatureStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        for (j, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
    }
}

/// A labelled train/test dataset with features already preprocessed.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train_inputs: Array2<f64>,
    pub train_labels: Vec<usize>,
    pub test_inputs: Array2<f64>,
    pub test_labels: Vec<usize>,
    pub feature_stats: FeatureStats,
    pub class_count: usize,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.train_inputs.ncols()
    }

    pub fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.input_dim();
        if self.test_inputs.ncols() != d && self.test_inputs.nrows() > 0 {
            return Err(Error::shape("train and test feature widths differ"));
        }
        if self.train_inputs.nrows() != self.train_labels.len()
            || self.test_inputs.nrows() != self.test_labels.len()
        {
            return Err(Error::shape("input and label counts differ"));
        }
        for (i, v) in self.train_inputs.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    index: i / d.max(1),
                    what: "training feature",
                });
            }
        }
        let bad = self
            .train_labels
            .iter()
            .chain(&self.test_labels)
            .any(|&l| l >= self.class_count);
        if bad {
            return Err(Error::config(format!("label outside [0, {})", self.class_count)));
        }
        Ok(())
    }

    /// Training examples at `rows` as a hard-label batch.
    pub fn train_batch(&self, rows: &[usize]) -> Result<Batch> {
        Batch::hard(
            self.train_inputs.select(Axis(0), rows),
            rows.iter().map(|&r| self.train_labels[r]).collect(),
            self.class_count,
        )
    }

    pub fn class_totals(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.train_labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Seeded stratified split: per class, `round(n_c * test_fraction)` examples
/// go to test. Both index lists are returned sorted.
pub fn stratified_indices(labels: &[usize], class_count: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
