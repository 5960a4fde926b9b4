use serde::{Deserialize, Serialize};

use crate::strategy::Algorithm;

pub const BYTES_PER_SCALAR: u64 = 8;

/// Metrics after one round (round 0 is the initial model).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub seed: u64,
    pub round: u32,
    pub test_accuracy: Option<f64>,
    pub test_nll: Option<f64>,
    /// Mean data loss of `w_g` over all training shards.
    pub train_nll: f64,
    /// Mean data loss of `w_g` on each client's shard.
    pub client_losses: Vec<f64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub wall_ms: f64,
    pub acc_avg_last3: Option<f64>,
    pub acc_max_last3: Option<f64>,
    /// `|w_g - w*|_inf` when the fixed point is known in closed form.
    pub oracle_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_g: Option<Vec<f64>>,
}

/// Mean and max of the trailing (up to) three accuracies ending at round `r`.
/// `history[i]` is the accuracy after round `i`; round 0 only counts at `r = 0`.
pub fn trailing_window(history: &[f64], r: usize) -> (f64, f64) {
    let lo = if r == 0 { 0 } else { r.saturating_sub(2).max(1) };
    let window = &history[lo..=r];
    let avg = window.iter().sum::<f64>() / window.len() as f64;
    let max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (avg, max)
}

/// First round whose test accuracy reaches `threshold` (ties count).
pub fn rounds_to_accuracy(records: &[RoundRecord], threshold: f64) -> Option<u32> {
    records
        .iter()
        .filter(|r| r.round > 0)
        .find(|r| r.test_accuracy.is_some_and(|a| a >= threshold))
        .map(|r| r.round)
}

/// Scalars sent per client per round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCost {
    pub up: usize,
    pub down: usize,
}

/// Payload scalars for a client holding `m_k` of the `m_total` memory points.
pub fn comm_cost(alg: Algorithm, p: usize, c: usize, m_k: usize, m_total: usize) -> CommCost {
    match alg {
        Algorithm::FedLapCov => CommCost { up: 2 * p, down: 2 * p },
        Algorithm::FedLapFunc => CommCost {
            up: p + m_k * c,
            down: p + m_total * c,
        },
        _ => CommCost { up: p, down: p },
    }
}
