use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::objective::ObjectiveSpec;
use crate::error::{Error, Result};
use crate::model::ParamVector;

/// Damped Newton with backtracking, for objectives that expose a Hessian.
///
/// Used as the "exact local solve" in oracle experiments; a strongly convex
/// quadratic is solved in one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub max_iters: usize,
    /// Stop when the gradient's max-norm drops below this.
    pub tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_iters: 100,
            tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub grad_inf_norm: f64,
}

pub fn newton_minimize(
    spec: &ObjectiveSpec<'_>,
    init: &[f64],
    cfg: &NewtonConfig,
) -> Result<(ParamVector, NewtonReport)> {
    spec.validate(init.len())?;
    let p = init.len();
    let mut w = init.to_vec();
    let mut report = NewtonReport::default();
    let (mut f, mut g) = spec.value_and_grad(&w)?;
    for it in 0..cfg.max_iters {
        report.grad_inf_norm = inf_norm(&g);
        if report.grad_inf_norm <= cfg.tol {
            break;
        }
        let h = spec
            .hessian(&w)?
            .ok_or_else(|| Error::Solve("objective has no Hessian; use Adam".into()))?;
        let hm = DMatrix::from_fn(p, p, |i, j| h[[i, j]]);
        let rhs = DVector::from_iterator(p, g.iter().map(|x| -x));
        let step = damped_solve(hm, &rhs)?;
        let slope: f64 = step.iter().zip(g.iter()).map(|(d, g)| d * g).sum();

        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(x, d)| x + t * d).collect();
            let (ft, gt) = spec.value_and_grad(&trial)?;
            // Near the optimum rounding noise dominates the value; fall back to
            // requiring a smaller gradient.
            if ft.is_finite() && (ft <= f + 1e-4 * t * slope || inf_norm(&gt) < report.grad_inf_norm) {
                w = trial;
                f = ft;
                g = gt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        report.iterations = it + 1;
        if !accepted {
            break;
        }
    }
    report.grad_inf_norm = inf_norm(&g);
    if !w.iter().all(|x| x.is_finite()) {
        return Err(Error::Solve("Newton iterate became non-finite".into()));
    }
    Ok((ParamVector(w), report))
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `(H + mu I) d = rhs`, increasing `mu` until the matrix is positive definite.
fn damped_solve(h: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let p = h.nrows();
    let scale = (0..p).fold(0.0_f64, |m, i| m.max(h[(i, i)].abs())).max(1.0);
    let mut mu = 0.0;
    for _ in 0..40 {
        let mut m = h.clone();
        for i in 0..p {
            m[(i, i)] += mu;
        }
        if let Some(chol) = m.cholesky() {
            return Ok(chol.solve(rhs));
        }
        mu = if mu == 0.0 { 1e-10 * scale } else { mu * 10.0 };
    }
    Err(Error::Solve("Hessian could not be made positive definite".into()))
}
