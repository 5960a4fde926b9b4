//! Client-side objectives and the optimizers that minimize them.

pub mod adam;
pub mod newton;
pub mod objective;

use serde::{Deserialize, Serialize};

pub use adam::{minimize, AdamConfig, AdamReport};
pub use newton::{newton_minimize, NewtonConfig};
pub use objective::{ComponentValues, DataLoss, FuncTerm, ModelLoss, ObjectiveSpec, Sign};

use crate::error::Result;
use crate::model::ParamVector;

/// Local optimizer choice. `Newton` gives exact solves for quadratics and
/// linear models and is what the oracle experiments use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalSolver {
    Adam(AdamConfig),
    Newton(NewtonConfig),
}

impl Default for LocalSolver {
    fn default() -> Self {
        LocalSolver::Adam(AdamConfig::default())
    }
}

impl LocalSolver {
    pub fn validate(&self) -> Result<()> {
        match self {
            LocalSolver::Adam(c) => c.validate(),
            LocalSolver::Newton(_) => Ok(()),
        }
    }

    /// Minimizes `spec` from `init`; `seed` replaces the Adam config's seed so
    /// callers can key streams per client and round.
    pub fn solve(&self, spec: &ObjectiveSpec<'_>, init: &[f64], seed: u64) -> Result<ParamVector> {
        match self {
            LocalSolver::Adam(cfg) => {
                let cfg = AdamConfig {
                    seed,
                    ..cfg.clone()
                };
                Ok(minimize(spec, init, &cfg)?.0)
            }
            LocalSolver::Newton(cfg) => Ok(newton_minimize(spec, init, cfg)?.0),
        }
    }
}
