use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::ObjectiveSpec;
use crate::error::{Error, Result};
use crate::model::ParamVector;

/// Objective values below this abort the run (unbounded function-space terms).
pub const DIVERGENCE_FLOOR: f64 = -1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 1,
            batch_size: None,
            grad_clip_norm: None,
            seed: 0,
        }
    }
}

impl AdamConfig {
    pub fn full_batch(learning_rate: f64, epochs: usize) -> Self {
        AdamConfig {
            learning_rate,
            epochs,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("adam learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("adam epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("adam eps must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("adam batch_size must be positive"));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("grad_clip_norm must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AdamReport {
    pub steps: usize,
    /// Largest gradient norm actually applied (after clipping).
    pub max_applied_grad_norm: f64,
    /// Stochastic objective estimate at the last step, rescaled to the full objective.
    pub last_value: f64,
}

/// Minibatch Adam over `spec` starting at `init`.
///
/// Each epoch visits every data example once in a seeded random order.
/// Without a data term an epoch is a single full step.
pub fn minimize(
    spec: &ObjectiveSpec<'_>,
    init: &[f64],
    cfg: &AdamConfig,
) -> Result<(ParamVector, AdamReport)> {
    cfg.validate()?;
    spec.validate(init.len())?;
    let p = init.len();
    let n = spec.data_len();
    let bs = cfg.batch_size.unwrap_or(n).clamp(1, n.max(1));
    let full_batch = n == 0 || bs >= n;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = init.to_vec();
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut report = AdamReport::default();
    let (mut b1t, mut b2t) = (1.0, 1.0);

    for _ in 0..cfg.epochs {
        if !full_batch {
            order.shuffle(&mut rng);
        }
        let chunks: Vec<&[usize]> = if full_batch {
            vec![&order[..]]
        } else {
            order.chunks(bs).collect()
        };
        for rows in chunks {
            let (value, mut grad) = if full_batch {
                spec.step_value_and_grad(&w, None, 1.0)?
            } else {
                spec.step_value_and_grad(&w, Some(rows), rows.len() as f64 / n as f64)?
            };
            let fraction = if full_batch { 1.0 } else { rows.len() as f64 / n as f64 };
            let estimate = value / fraction;
            if !estimate.is_finite() || !grad.is_finite() {
                return Err(diverged(spec, &w, report.steps, "non-finite objective or gradient"));
            }
            if estimate < DIVERGENCE_FLOOR {
                return Err(diverged(
                    spec,
                    &w,
                    report.steps,
                    &format!("objective {estimate:e} fell below {DIVERGENCE_FLOOR:e}"),
                ));
            }
            let mut norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if let Some(clip) = cfg.grad_clip_norm {
                if norm > clip {
                    let s = clip / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                    norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                }
            }
            report.max_applied_grad_norm = report.max_applied_grad_norm.max(norm);

            b1t *= cfg.beta1;
            b2t *= cfg.beta2;
            for j in 0..p {
                let g = grad[j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                let mh = m[j] / (1.0 - b1t);
                let vh = v[j] / (1.0 - b2t);
                w[j] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
            }
            report.steps += 1;
            report.last_value = estimate;
        }
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(diverged(spec, &w, report.steps, "non-finite parameters"));
    }
    Ok((ParamVector(w), report))
}

fn diverged(spec: &ObjectiveSpec<'_>, w: &[f64], step: usize, what: &str) -> Error {
    let detail = match spec.components(w) {
        Ok(c) => format!(
            "{what}; components: base={:e} linear={:e} quad_dual={:e} prox={:e} l2={:e} func={:e}",
            c.base, c.linear, c.quad_dual, c.prox, c.l2, c.func
        ),
        Err(e) => format!("{what}; components unavailable: {e}"),
    };
    Error::Diverged {
        step,
        message: detail,
    }
}
