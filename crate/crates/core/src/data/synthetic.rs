//! Synthetic testbeds with known optima.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureStats};
use crate::error::{Error, Result};
use crate::local::DataLoss;
use crate::model::DiagCurvature;

/// `l(w) = 1/2 |A w - b|^2`, one example per row of `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticLoss {
    pub a: Array2<f64>,
    pub b: Vec<f64>,
}

impl QuadraticLoss {
    pub fn new(a: Array2<f64>, b: Vec<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::shape(format!("A has {} rows but b has {}", a.nrows(), b.len())));
        }
        if a.ncols() == 0 {
            return Err(Error::shape("quadratic loss needs at least one parameter"));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: 0,
                what: "quadratic coefficient",
            });
        }
        Ok(QuadraticLoss { a, b })
    }

    /// `A^T A`.
    pub fn gram(&self) -> Array2<f64> {
        self.a.t().dot(&self.a)
    }

    /// `A^T b`.
    pub fn moment(&self) -> Vec<f64> {
        self.a.t().dot(&ndarray::ArrayView1::from(&self.b)).to_vec()
    }
}

impl DataLoss for QuadraticLoss {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn len(&self) -> usize {
        self.a.nrows()
    }

    fn value_and_grad(&self, w: &[f64], rows: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        if w.len() != self.dim() {
            return Err(Error::shape(format!("{} parameters, expected {}", w.len(), self.dim())));
        }
        let mut value = 0.0;
        let mut grad = vec![0.0; w.len()];
        let mut visit = |i: usize| {
            let row = self.a.row(i);
            let r: f64 = row.iter().zip(w).map(|(a, x)| a * x).sum::<f64>() - self.b[i];
            value += 0.5 * r * r;
            for (g, a) in grad.iter_mut().zip(row.iter()) {
                *g += r * a;
            }
        };
        match rows {
            Some(rows) => rows.iter().for_each(|&i| visit(i)),
            None => (0..self.len()).for_each(&mut visit),
        }
        Ok((value, grad))
    }

    fn diag_curvature(&self, _w: &[f64]) -> Result<DiagCurvature> {
        Ok(DiagCurvature(
            self.a.axis_iter(Axis(1)).map(|c| c.iter().map(|v| v * v).sum()).collect(),
        ))
    }

    fn hessian(&self, _w: &[f64]) -> Result<Option<Array2<f64>>> {
        Ok(Some(self.gram()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub rows_per_client: usize,
    /// Square diagonal `A_k`, so the diagonal curvature is the exact Hessian.
    pub diagonal: bool,
    /// Spread of the per-client centres (heterogeneity).
    pub spread: f64,
    /// Std of the dense `A_k` entries; `None` means `1/sqrt(rows)`, so that
    /// `E[A_k^T A_k] = I`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry_scale: Option<f64>,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        QuadraticSpec {
            dim: 8,
            rows_per_client: 32,
            diagonal: false,
            spread: 1.0,
            entry_scale: None,
        }
    }
}

/// One quadratic loss per client.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticClients {
    pub clients: Vec<QuadraticLoss>,
}

impl QuadraticClients {
    pub fn dim(&self) -> usize {
        self.clients.first().map_or(0, |c| c.dim())
    }

    /// `argmin sum_k l_k + 1/2 delta |w|^2` by the normal equations.
    pub fn oracle(&self, delta: f64) -> Result<Vec<f64>> {
        self.weighted_oracle(delta, &vec![1.0; self.clients.len()])
    }

    /// `argmin sum_k s_k l_k + 1/2 delta |w|^2`.
    pub fn weighted_oracle(&self, delta: f64, scales: &[f64]) -> Result<Vec<f64>> {
        let p = self.dim();
        let mut h = DMatrix::<f64>::identity(p, p) * delta;
        let mut rhs = DVector::<f64>::zeros(p);
        for (c, &s) in self.clients.iter().zip(scales) {
            let g = c.gram();
            let m = c.moment();
            for i in 0..p {
                rhs[i] += s * m[i];
                for j in 0..p {
                    h[(i, j)] += s * g[[i, j]];
                }
            }
        }
        let sol = h
            .cholesky()
            .ok_or_else(|| Error::Solve("normal equations are not positive definite".into()))?
            .solve(&rhs);
        Ok(sol.iter().copied().collect())
    }
}

pub fn quadratic_clients(spec: &QuadraticSpec, clients: usize, seed: u64) -> Result<QuadraticClients> {
    if spec.dim == 0 || clients == 0 || (!spec.diagonal && spec.rows_per_client == 0) {
        return Err(Error::config("quadratic clients need positive dim, rows and client count"));
    }
    if spec.entry_scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::config("quadratic entry_scale must be positive and finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(clients);
    for _ in 0..clients {
        let centre: Vec<f64> = (0..spec.dim)
            .map(|_| spec.spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let a = if spec.diagonal {
            let mut a = Array2::zeros((spec.dim, spec.dim));
            for j in 0..spec.dim {
                a[[j, j]] = rng.random_range(0.5..2.0f64).sqrt();
            }
            a
        } else {
            let scale = spec
                .entry_scale
                .unwrap_or_else(|| (spec.rows_per_client as f64).sqrt().recip());
            Array2::from_shape_fn((spec.rows_per_client, spec.dim), |_| {
                scale * rng.sample::<f64, _>(StandardNormal)
            })
        };
        let noise: Vec<f64> = (0..a.nrows()).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let b = a
            .dot(&ndarray::Array1::from(centre))
            .iter()
            .zip(noise)
            .map(|(v, e)| v + e)
            .collect();
        out.push(QuadraticLoss::new(a, b)?);
    }
    Ok(QuadraticClients { clients: out })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Distance of each class mean from the origin, in noise standard deviations.
    pub separation: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            classes: 2,
            dim: 2,
            train_per_class: 500,
            test_per_class: 100,
            separation: 6.0,
        }
    }
}

/// Isotropic unit-variance Gaussian clusters. Class `c` is centred on
/// `separation * e_c` when `dim >= classes`, otherwise on a random direction.
pub fn gaussian_blobs(spec: &BlobSpec, seed: u64) -> Result<Dataset> {
    if spec.classes < 2 || spec.dim == 0 || spec.train_per_class == 0 {
        return Err(Error::config("blobs need at least two classes, one feature and one point"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|c| {
            if spec.dim >= spec.classes {
                (0..spec.dim).map(|j| if j == c { spec.separation } else { 0.0 }).collect()
            } else {
                let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter().map(|x| spec.separation * x / n).collect()
            }
        })
        .collect();
    let mut draw = |per_class: usize| {
        let n = per_class * spec.classes;
        let mut x = Array2::zeros((n, spec.dim));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % spec.classes;
            for j in 0..spec.dim {
                x[[i, j]] = means[c][j] + rng.sample::<f64, _>(StandardNormal);
            }
            y.push(c);
        }
        (x, y)
    };
    let (train_inputs, train_labels) = draw(spec.train_per_class);
    let (test_inputs, test_labels) = draw(spec.test_per_class);
    Ok(Dataset {
        train_inputs,
        train_labels,
        test_inputs,
        test_labels,
        feature_stats: FeatureStats::identity(spec.dim),
        class_count: spec.classes,
    })
}
