//! FedAvg, FedProx, FedADMM and FedDyn.
//!
//! All four minimize the mean loss `l_k / N_k`. FedADMM and FedDyn keep a
//! dual `v_k`; clients send only `w_k` and the server replays the dual update
//! on its own copy.

use super::{require, Algorithm, ClientData, ClientMsg, ClientState, GlobalMsg, ServerState, StepContext, StrategyConfig};
use crate::error::{Error, Result};
use crate::local::ObjectiveSpec;
use crate::model::ParamVector;

/// Proximal/dual step for client `k`: `alpha` (FedADMM) or `alpha / N_k` (FedDyn).
fn client_alpha(cfg: &StrategyConfig, n_k: usize) -> f64 {
    match cfg.algorithm {
        Algorithm::FedDyn => cfg.alpha / n_k as f64,
        _ => cfg.alpha,
    }
}

pub fn baseline_client_step(
    ctx: &StepContext<'_>,
    state: &ClientState,
    msg: &GlobalMsg,
    data: &ClientData<'_>,
) -> Result<(ClientState, ClientMsg)> {
    let cfg = ctx.cfg;
    let p = msg.w_g.len();
    if state.v.len() != p {
        return Err(Error::shape("client state and global model differ in dimension"));
    }
    let n_k = data.n_k();
    let a = client_alpha(cfg, n_k);
    let mut obj = ObjectiveSpec::new(Some(data.loss)).with_base_scale(1.0 / n_k as f64);
    match cfg.algorithm {
        Algorithm::FedAvg => {}
        Algorithm::FedProx => {
            if cfg.alpha > 0.0 {
                obj = obj.with_prox(msg.w_g.to_vec(), vec![a; p]);
            }
        }
        Algorithm::FedAdmm | Algorithm::FedDyn => {
            obj = obj
                .with_linear(state.v.to_vec(), 1.0)
                .with_prox(msg.w_g.to_vec(), vec![a; p]);
            if cfg.algorithm == Algorithm::FedDyn && cfg.weight_decay > 0.0 {
                obj = obj.with_l2(cfg.weight_decay);
            }
        }
        other => return Err(Error::strategy(format!("{other} is not a baseline"))),
    }
    let w = ctx.solver.solve(&obj, &msg.w_g, ctx.seed)?;
    let mut v = state.v.clone();
    if matches!(cfg.algorithm, Algorithm::FedAdmm | Algorithm::FedDyn) {
        for j in 0..p {
            v[j] += a * (w[j] - msg.w_g[j]);
        }
    }
    let reply = ClientMsg {
        client_id: state.client_id as u32,
        round: msg.round,
        v: None,
        precision: None,
        soft_labels: None,
        w: Some(w.clone()),
    };
    Ok((
        ClientState {
            v,
            w,
            ..state.clone()
        },
        reply,
    ))
}

/// FedAvg/FedProx: `w_g = sum_k (N_k / N) w_k`. FedADMM/FedDyn: replay
/// `v_k += alpha_k (w_k - w_g)` then `w_g = (1/K) sum_k (w_k + v_k / alpha_k)`.
pub fn baseline_server_step(cfg: &StrategyConfig, state: &mut ServerState, msgs: &[&ClientMsg]) -> Result<()> {
    let p = state.w_g.len();
    let k_count = msgs.len() as f64;
    let n_total = state.n_total() as f64;
    let mut next = vec![0.0; p];
    for m in msgs {
        let k = m.client_id as usize;
        let w = require(&m.w, "w", m.client_id)?;
        if w.len() != p {
            return Err(Error::shape(format!("client {k} sent {} weights, expected {p}", w.len())));
        }
        match cfg.algorithm {
            Algorithm::FedAvg | Algorithm::FedProx => {
                let share = state.client_sizes[k] as f64 / n_total;
                next.iter_mut().zip(w.iter()).for_each(|(a, b)| *a += share * b);
            }
            Algorithm::FedAdmm | Algorithm::FedDyn => {
                let a = client_alpha(cfg, state.client_sizes[k]);
                let dual = &mut state.duals[k];
                for j in 0..p {
                    dual[j] += a * (w[j] - state.w_g[j]);
                    next[j] += (w[j] + dual[j] / a) / k_count;
                }
            }
            other => return Err(Error::strategy(format!("{other} is not a baseline"))),
        }
    }
    state.w_g = ParamVector(next);
    Ok(())
}
