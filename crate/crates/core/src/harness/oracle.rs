//! Centralized training on the union of all client shards.

use std::sync::Arc;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::runner::{build_problem, evaluate, load_dataset, Problem};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::local::{DataLoss, LocalSolver, ModelLoss, NewtonConfig, ObjectiveSpec};
use crate::model::ParamVector;

/// Newton is used for linear models up to this many parameters.
pub const NEWTON_MAX_PARAMS: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleResult {
    pub delta: f64,
    pub w: ParamVector,
    /// Mean training loss over the union of shards.
    pub train_nll: f64,
    pub test_nll: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// Minimizes `sum_k l_k(w) + 1/2 delta |w|^2` for the first seed's problem.
pub fn centralized_oracle(cfg: &ExperimentConfig, delta: f64) -> Result<OracleResult> {
    let dataset = load_dataset(&cfg.dataset)?;
    let problem = build_problem(cfg, dataset.as_ref(), 0)?;
    oracle_for_problem(cfg, &problem, delta)
}

pub fn oracle_for_problem(cfg: &ExperimentConfig, problem: &Problem, delta: f64) -> Result<OracleResult> {
    if !(delta >= 0.0) {
        return Err(Error::config("oracle delta must be nonnegative"));
    }
    let w = if let Some(qc) = &problem.quadratic {
        ParamVector(qc.oracle(delta)?)
    } else {
        let (ds, spec, assignment) = match (&problem.dataset, &problem.spec, &problem.assignment) {
            (Some(d), Some(s), Some(a)) => (d, s, a),
            _ => return Err(Error::config("oracle needs a dataset")),
        };
        let mut rows: Vec<usize> = assignment.shards.iter().flatten().copied().collect();
        rows.sort_unstable();
        let union = ModelLoss::new(spec.clone(), ds.train_batch(&rows)?);
        let mut obj = ObjectiveSpec::new(Some(&union as &dyn DataLoss));
        if delta > 0.0 {
            obj = obj.with_l2(delta);
        }
        let solver = if spec.is_glm() && spec.param_count() <= NEWTON_MAX_PARAMS {
            LocalSolver::Newton(NewtonConfig::default())
        } else {
            cfg.local.clone()
        };
        solver.solve(&obj, &problem.init, problem.seed)?
    };
    let eval = evaluate(problem, &w)?;
    Ok(OracleResult {
        delta,
        w,
        train_nll: eval.train_nll,
        test_nll: eval.test_nll,
        test_accuracy: eval.test_accuracy,
    })
}

/// Loads the dataset once for several oracle calls.
pub fn oracle_sweep(cfg: &ExperimentConfig, deltas: &[f64]) -> Result<Vec<OracleResult>> {
    let dataset: Option<Arc<Dataset>> = load_dataset(&cfg.dataset)?;
    let problem = build_problem(cfg, dataset.as_ref(), 0)?;
    deltas.iter().map(|&d| oracle_for_problem(cfg, &problem, d)).collect()
}
