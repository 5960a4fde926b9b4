//! FedLap, FedLap-Cov and FedLap-Func.

use super::{
    flat_soft_labels, require, reshape_labels, ClientData, ClientMsg, ClientState, GlobalMsg,
    MemorySet, StepContext, StrategyConfig,
};
use crate::error::{Error, Result};
use crate::local::{minimize, FuncTerm, ObjectiveSpec, Sign};
use crate::model::{Batch, DiagCurvature, ModelSpec, ParamVector, Targets};

fn check_dims(state: &ClientState, msg: &GlobalMsg) -> Result<usize> {
    let p = msg.w_g.len();
    if state.v.len() != p || state.precision.len() != p {
        return Err(Error::shape(format!(
            "client {} state has dimension {}, global model {p}",
            state.client_id,
            state.v.len()
        )));
    }
    Ok(p)
}

/// `l_k(w) + delta v_k^T w + 1/2 delta |w - w_g|^2`.
fn fedlap_objective<'a>(state: &ClientState, msg: &GlobalMsg, data: &ClientData<'a>, delta: f64) -> ObjectiveSpec<'a> {
    let p = msg.w_g.len();
    ObjectiveSpec::new(Some(data.loss))
        .with_linear(state.v.to_vec(), delta)
        .with_prox(msg.w_g.to_vec(), vec![delta; p])
}

fn dual_update(v: &ParamVector, w: &[f64], w_g: &[f64], rho: f64) -> ParamVector {
    ParamVector(v.iter().zip(w).zip(w_g).map(|((v, w), g)| v + rho * (w - g)).collect())
}

fn sum_sites(msgs: &[&ClientMsg]) -> Result<ParamVector> {
    let mut total: Option<Vec<f64>> = None;
    for m in msgs {
        let v = require(&m.v, "v", m.client_id)?;
        match &mut total {
            None => total = Some(v.to_vec()),
            Some(t) => {
                if t.len() != v.len() {
                    return Err(Error::shape(format!("client {} sent {} values", m.client_id, v.len())));
                }
                t.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += b);
            }
        }
    }
    total
        .map(ParamVector)
        .ok_or_else(|| Error::strategy("no client messages"))
}

/// Minimizes the FedLap local objective from `w_g`, then
/// `v_k <- v_k + rho (w_k - w_g)`.
pub fn fedlap_client_step(
    ctx: &StepContext<'_>,
    state: &ClientState,
    msg: &GlobalMsg,
    data: &ClientData<'_>,
) -> Result<(ClientState, ClientMsg)> {
    check_dims(state, msg)?;
    let obj = fedlap_objective(state, msg, data, ctx.cfg.delta);
    let w = ctx.solver.solve(&obj, &msg.w_g, ctx.seed)?;
    let v = dual_update(&state.v, &w, &msg.w_g, ctx.rho(data.n_k(), msg.round));
    let reply = ClientMsg {
        client_id: state.client_id as u32,
        round: msg.round,
        v: Some(v.clone()),
        precision: None,
        soft_labels: None,
        w: None,
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

/// `w_g = sum_k v_k`, summed in ascending client id.
pub fn fedlap_server_step(msgs: &[&ClientMsg]) -> Result<ParamVector> {
    sum_sites(msgs)
}

/// Preconditioned client step:
/// `w_k = argmin l_k + v^T w - 1/2 w^T V w + 1/2 |w - w_g|^2_{S_g}`,
/// `S_k = H(w_k) - V + S_g`, `v += rho (S_k w_k - S_g w_g)`, `V = (1-rho) V + rho H`.
pub fn fedlapcov_client_step(
    ctx: &StepContext<'_>,
    state: &ClientState,
    msg: &GlobalMsg,
    data: &ClientData<'_>,
) -> Result<(ClientState, ClientMsg)> {
    let p = check_dims(state, msg)?;
    let s_g = msg
        .s_g
        .as_ref()
        .ok_or_else(|| Error::strategy("FedLap-Cov broadcast lacks S_g"))?;
    if s_g.len() != p {
        return Err(Error::shape("S_g dimension differs from w_g"));
    }
    if s_g.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::strategy("S_g must be positive"));
    }
    let obj = ObjectiveSpec::new(Some(data.loss))
        .with_linear(state.v.to_vec(), 1.0)
        .with_quad_dual(state.precision.to_vec())
        .with_prox(msg.w_g.to_vec(), s_g.to_vec());
    let w = ctx.solver.solve(&obj, &msg.w_g, ctx.seed)?;
    let h = if ctx.cfg.zero_curvature {
        DiagCurvature::zeros(p)
    } else {
        data.loss.diag_curvature(&w)?
    };
    let rho = ctx.rho(data.n_k(), msg.round);
    let mut v = state.v.clone();
    let mut big_v = state.precision.clone();
    for j in 0..p {
        let s_k = h[j] - state.precision[j] + s_g[j];
        if !(s_k > 0.0) {
            return Err(Error::strategy(format!(
                "client {} local precision S_k[{j}] = {s_k:e} is not positive",
                state.client_id
            )));
        }
        v[j] += rho * (s_k * w[j] - s_g[j] * msg.w_g[j]);
        big_v[j] = (1.0 - rho) * state.precision[j] + rho * h[j];
    }
    let reply = ClientMsg {
        client_id: state.client_id as u32,
        round: msg.round,
        v: Some(v.clone()),
        precision: Some(big_v.clone()),
        soft_labels: None,
        w: None,
    };
    Ok((
        ClientState {
            v,
            precision: big_v,
            w,
            ..state.clone()
        },
        reply,
    ))
}

/// `S_g = delta + sum_k V_k`, `w_g = S_g^{-1} sum_k v_k` (elementwise).
pub fn fedlapcov_server_step(msgs: &[&ClientMsg], delta: f64) -> Result<(DiagCurvature, ParamVector)> {
    let sum_v = sum_sites(msgs)?;
    let mut s_g = DiagCurvature(vec![delta; sum_v.len()]);
    for m in msgs {
        let vk = require(&m.precision, "V", m.client_id)?;
        if vk.len() != s_g.len() {
            return Err(Error::shape(format!("client {} sent V of length {}", m.client_id, vk.len())));
        }
        if vk.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::strategy(format!("client {} sent a negative V entry", m.client_id)));
        }
        s_g.iter_mut().zip(vk.iter()).for_each(|(s, v)| *s += v);
    }
    let w_g = ParamVector(sum_v.iter().zip(s_g.iter()).map(|(v, s)| v / s).collect());
    Ok((s_g, w_g))
}

fn soft_batch(spec: &ModelSpec, mem: &MemorySet, ids: &[usize], labels: &[f64], tau_f: f64) -> Result<Batch> {
    let targets = reshape_labels(labels, ids.len(), spec.class_count)?;
    Batch::new(
        mem.inputs_of(ids),
        Targets::Soft(targets),
        Some(mem.tau(ids, tau_f)?),
        spec.class_count,
    )
}

/// FedLap step plus function-space terms: subtracts the client's previous
/// soft labels on its own memory and adds the global soft labels on all
/// memory points. Both terms are skipped in the first round (no previous
/// client labels exist) and when `tau = 0`.
pub fn fedlapfunc_client_step(
    ctx: &StepContext<'_>,
    state: &ClientState,
    msg: &GlobalMsg,
    data: &ClientData<'_>,
) -> Result<(ClientState, ClientMsg)> {
    check_dims(state, msg)?;
    let (mem, spec) = match (data.memory, data.model) {
        (Some(m), Some(s)) => (m, s),
        _ => return Err(Error::config("FedLap-Func client needs a memory set and a model")),
    };
    let c = spec.class_count;
    let global = msg
        .soft_labels
        .as_ref()
        .ok_or_else(|| Error::strategy("FedLap-Func broadcast lacks soft labels"))?;
    if global.len() != mem.len() * c {
        return Err(Error::strategy(format!(
            "broadcast has {} soft-label values for {} memory points",
            global.len(),
            mem.len()
        )));
    }
    let own = mem.owned_by(data.id);
    let mut obj = fedlap_objective(state, msg, data, ctx.cfg.delta);
    if let Some(prev) = &state.own_soft_labels {
        if ctx.cfg.tau > 0.0 && !mem.is_empty() {
            if !own.is_empty() {
                obj = obj.with_func_term(FuncTerm {
                    spec: spec.clone(),
                    batch: soft_batch(spec, mem, &own, prev, ctx.cfg.tau)?,
                    sign: Sign::Minus,
                });
            }
            let all: Vec<usize> = (0..mem.len()).collect();
            obj = obj.with_func_term(FuncTerm {
                spec: spec.clone(),
                batch: soft_batch(spec, mem, &all, global, ctx.cfg.tau)?,
                sign: Sign::Plus,
            });
        }
    }
    let w = ctx.solver.solve(&obj, &msg.w_g, ctx.seed)?;
    let v = dual_update(&state.v, &w, &msg.w_g, ctx.rho(data.n_k(), msg.round));
    let labels = flat_soft_labels(spec, &w, mem.inputs_of(&own).view())?;
    let reply = ClientMsg {
        client_id: state.client_id as u32,
        round: msg.round,
        v: Some(v.clone()),
        precision: None,
        soft_labels: Some(labels.clone()),
        w: None,
    };
    Ok((
        ClientState {
            v,
            w,
            own_soft_labels: Some(labels),
            ..state.clone()
        },
        reply,
    ))
}

/// `w_g = argmin sum_k [sum_{i in M_k} tau_i CE(y_i, w) - delta v_k^T w] + 1/2 delta |w|^2`,
/// run with the server optimizer from the previous `w_g`. With no memory
/// (or `tau = 0`) the minimizer is `sum_k v_k` and is returned directly.
pub fn fedlapfunc_server_step(
    msgs: &[&ClientMsg],
    mem: &MemorySet,
    spec: &ModelSpec,
    cfg: &StrategyConfig,
    prev_w_g: &[f64],
) -> Result<ParamVector> {
    let sum_v = sum_sites(msgs)?;
    if mem.is_empty() || cfg.tau == 0.0 {
        return Ok(sum_v);
    }
    let c = spec.class_count;
    let mut labels = vec![f64::NAN; mem.len() * c];
    for m in msgs {
        let own = mem.owned_by(m.client_id as usize);
        let sent = require(&m.soft_labels, "soft labels", m.client_id)?;
        if sent.len() != own.len() * c {
            return Err(Error::strategy(format!(
                "client {} sent {} soft-label values for {} memory points",
                m.client_id,
                sent.len(),
                own.len()
            )));
        }
        for (row, &id) in own.iter().enumerate() {
            labels[id * c..(id + 1) * c].copy_from_slice(&sent[row * c..(row + 1) * c]);
        }
    }
    if let Some(missing) = (0..mem.len()).find(|&i| labels[i * c].is_nan()) {
        return Err(Error::strategy(format!("no soft label for memory point {missing}")));
    }
    let all: Vec<usize> = (0..mem.len()).collect();
    let obj = ObjectiveSpec::new(None)
        .with_func_term(FuncTerm {
            spec: spec.clone(),
            batch: soft_batch(spec, mem, &all, &labels, cfg.tau)?,
            sign: Sign::Plus,
        })
        .with_linear(sum_v.to_vec(), -cfg.delta)
        .with_l2(cfg.delta);
    Ok(minimize(&obj, prev_w_g, &cfg.server_opt)?.0)
}
