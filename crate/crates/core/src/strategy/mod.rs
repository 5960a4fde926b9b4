//! The seven federated algorithms as pure round-step functions.
//!
//! A round is: the server broadcasts a [`GlobalMsg`], each client runs its
//! `*_client_step` and answers with a [`ClientMsg`], and the server reduces
//! the messages (in ascending client-id order) into the next [`GlobalMsg`].

mod baseline;
mod fedlap;
pub mod memory;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use baseline::{baseline_client_step, baseline_server_step};
pub use fedlap::{
    fedlap_client_step, fedlap_server_step, fedlapcov_client_step, fedlapcov_server_step,
    fedlapfunc_client_step, fedlapfunc_server_step,
};
pub use memory::{MemoryPoint, MemorySet};

use crate::error::{Error, Result};
use crate::local::{AdamConfig, DataLoss, LocalSolver};
use crate::model::{self, DiagCurvature, ModelSpec, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx,
    #[serde(rename = "fedadmm")]
    FedAdmm,
    #[serde(rename = "feddyn")]
    FedDyn,
    #[serde(rename = "fedlap")]
    FedLap,
    #[serde(rename = "fedlap_cov")]
    FedLapCov,
    #[serde(rename = "fedlap_func")]
    FedLapFunc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::FedAvg,
        Algorithm::FedProx,
        Algorithm::FedAdmm,
        Algorithm::FedDyn,
        Algorithm::FedLap,
        Algorithm::FedLapCov,
        Algorithm::FedLapFunc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::FedAdmm => "fedadmm",
            Algorithm::FedDyn => "feddyn",
            Algorithm::FedLap => "fedlap",
            Algorithm::FedLapCov => "fedlap_cov",
            Algorithm::FedLapFunc => "fedlap_func",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(
            self,
            Algorithm::FedAvg | Algorithm::FedProx | Algorithm::FedAdmm | Algorithm::FedDyn
        )
    }

    /// Baselines whose data term is the per-example mean `l_k / N_k`.
    pub fn uses_mean_loss(self) -> bool {
        self.is_baseline()
    }

    pub fn default_rho(self) -> Rho {
        match self {
            Algorithm::FedLapCov => Rho::InverseClients,
            _ => Rho::DataFraction,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Damping of the site/dual update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Rho {
    /// `N_k / N`.
    DataFraction,
    /// `1 / K`.
    InverseClients,
    Fixed { value: f64 },
    /// `N_k / N` up to and including `switch_round`, `1 / K` afterwards.
    Schedule { switch_round: u32 },
}

impl Rho {
    pub fn value(&self, n_k: usize, n_total: usize, clients: usize, round: u32) -> f64 {
        match *self {
            Rho::DataFraction => n_k as f64 / n_total as f64,
            Rho::InverseClients => 1.0 / clients as f64,
            Rho::Fixed { value } => value,
            Rho::Schedule { switch_round } => {
                if round <= switch_round {
                    n_k as f64 / n_total as f64
                } else {
                    1.0 / clients as f64
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub algorithm: Algorithm,
    /// Prior precision of the FedLap family.
    pub delta: f64,
    /// Proximal/dual step of FedProx, FedADMM and FedDyn.
    pub alpha: f64,
    /// `None` picks the algorithm's default.
    pub rho: Option<Rho>,
    /// FedDyn local weight decay.
    pub weight_decay: f64,
    /// Function-space weight `tau_f` (FedLap-Func).
    pub tau: f64,
    /// Memory points per class per client (FedLap-Func).
    pub memory_per_class: usize,
    /// Server-side optimizer for FedLap-Func; each epoch is one full step.
    pub server_opt: AdamConfig,
    /// Replace the FedLap-Cov curvature with zeros (diagnostic reduction to FedLap).
    pub zero_curvature: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            algorithm: Algorithm::FedLap,
            delta: 1.0,
            alpha: 1.0,
            rho: None,
            weight_decay: 0.0,
            tau: 1.0,
            memory_per_class: 1,
            server_opt: AdamConfig::full_batch(1e-3, 5000),
            zero_curvature: false,
        }
    }
}

impl StrategyConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        StrategyConfig {
            algorithm,
            ..Default::default()
        }
    }

    pub fn rho(&self) -> Rho {
        self.rho.unwrap_or_else(|| self.algorithm.default_rho())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.algorithm.is_baseline() && !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config("delta must be positive for the FedLap family"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha must be nonnegative"));
        }
        if matches!(self.algorithm, Algorithm::FedAdmm | Algorithm::FedDyn) && self.alpha == 0.0 {
            return Err(Error::config("FedADMM/FedDyn need alpha > 0"));
        }
        if !(self.weight_decay >= 0.0) || !(self.tau >= 0.0) {
            return Err(Error::config("weight_decay and tau must be nonnegative"));
        }
        if let Rho::Fixed { value } = self.rho() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::config("fixed rho must lie in (0, 1]"));
            }
        }
        self.server_opt.validate()
    }
}

/// Server broadcast. `round` is the round this message starts (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalMsg {
    pub round: u32,
    pub w_g: ParamVector,
    /// Global precision `S_g` (FedLap-Cov).
    pub s_g: Option<DiagCurvature>,
    /// Row-major `M_total x C` soft labels at `w_g`, rows in memory-id order (FedLap-Func).
    pub soft_labels: Option<Vec<f64>>,
}

impl GlobalMsg {
    pub fn payload_scalars(&self) -> usize {
        self.w_g.len()
            + self.s_g.as_ref().map_or(0, |s| s.len())
            + self.soft_labels.as_ref().map_or(0, Vec::len)
    }
}

/// Client reply: exactly the fields its strategy needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientMsg {
    pub client_id: u32,
    pub round: u32,
    /// Linear site parameter / dual variable `v_k`.
    pub v: Option<ParamVector>,
    /// Quadratic site parameter `V_k` (FedLap-Cov).
    pub precision: Option<DiagCurvature>,
    /// Row-major `M_k x C` soft labels at `w_k`, rows in ascending memory id (FedLap-Func).
    pub soft_labels: Option<Vec<f64>>,
    /// Local weights (baselines).
    pub w: Option<ParamVector>,
}

impl ClientMsg {
    pub fn payload_scalars(&self) -> usize {
        self.v.as_ref().map_or(0, |v| v.len())
            + self.precision.as_ref().map_or(0, |v| v.len())
            + self.soft_labels.as_ref().map_or(0, Vec::len)
            + self.w.as_ref().map_or(0, |v| v.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    pub v: ParamVector,
    /// `V_k`, kept entrywise nonnegative.
    pub precision: DiagCurvature,
    pub w: ParamVector,
    /// Own-memory soft labels from the previous round's `w_k` (FedLap-Func).
    pub own_soft_labels: Option<Vec<f64>>,
}

impl ClientState {
    pub fn new(client_id: usize, init: &ParamVector) -> Self {
        let p = init.len();
        ClientState {
            client_id,
            v: ParamVector::zeros(p),
            precision: DiagCurvature::zeros(p),
            w: init.clone(),
            own_soft_labels: None,
        }
    }
}

/// What a client step sees of its own data.
#[derive(Clone, Copy, Debug)]
pub struct ClientData<'a> {
    pub id: usize,
    pub loss: &'a dyn DataLoss,
    /// Needed only by FedLap-Func.
    pub model: Option<&'a ModelSpec>,
    pub memory: Option<&'a MemorySet>,
}

impl ClientData<'_> {
    pub fn n_k(&self) -> usize {
        self.loss.len()
    }
}

/// Round-wide facts shared by all client steps.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub cfg: &'a StrategyConfig,
    pub solver: &'a LocalSolver,
    pub n_total: usize,
    pub clients: usize,
    /// Stream seed for this (run, client, round).
    pub seed: u64,
}

impl StepContext<'_> {
    pub fn rho(&self, n_k: usize, round: u32) -> f64 {
        self.cfg.rho().value(n_k, self.n_total, self.clients, round)
    }
}

/// Server-side state that persists across rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub w_g: ParamVector,
    pub s_g: Option<DiagCurvature>,
    pub client_sizes: Vec<usize>,
    /// Server copies of the duals (FedADMM/FedDyn).
    pub duals: Vec<ParamVector>,
    pub memory: Option<MemorySet>,
    pub model: Option<ModelSpec>,
}

impl ServerState {
    pub fn new(
        cfg: &StrategyConfig,
        w0: ParamVector,
        client_sizes: Vec<usize>,
        memory: Option<MemorySet>,
        model: Option<ModelSpec>,
    ) -> Result<Self> {
        cfg.validate()?;
        if client_sizes.is_empty() || client_sizes.contains(&0) {
            return Err(Error::strategy("every client needs at least one example"));
        }
        if cfg.algorithm == Algorithm::FedLapFunc && (memory.is_none() || model.is_none()) {
            return Err(Error::config("FedLap-Func needs a memory set and a model"));
        }
        let p = w0.len();
        Ok(ServerState {
            s_g: (cfg.algorithm == Algorithm::FedLapCov).then(|| DiagCurvature(vec![cfg.delta; p])),
            duals: vec![ParamVector::zeros(p); client_sizes.len()],
            w_g: w0,
            client_sizes,
            memory,
            model,
        })
    }

    pub fn clients(&self) -> usize {
        self.client_sizes.len()
    }

    pub fn n_total(&self) -> usize {
        self.client_sizes.iter().sum()
    }

    /// Broadcast for `round` built from the current global state.
    pub fn global_msg(&self, round: u32) -> Result<GlobalMsg> {
        let soft_labels = match (&self.memory, &self.model) {
            (Some(mem), Some(spec)) => Some(flat_soft_labels(spec, &self.w_g, mem.inputs.view())?),
            _ => None,
        };
        Ok(GlobalMsg {
            round,
            w_g: self.w_g.clone(),
            s_g: self.s_g.clone(),
            soft_labels,
        })
    }
}

pub(crate) fn flat_soft_labels(spec: &ModelSpec, w: &[f64], inputs: ArrayView2<f64>) -> Result<Vec<f64>> {
    Ok(model::soft_label(spec, w, inputs)?.into_iter().collect())
}

pub(crate) fn reshape_labels(flat: &[f64], rows: usize, classes: usize) -> Result<Array2<f64>> {
    if flat.len() != rows * classes {
        return Err(Error::strategy(format!(
            "expected {rows} soft labels of {classes} classes, got {} values",
            flat.len()
        )));
    }
    Array2::from_shape_vec((rows, classes), flat.to_vec()).map_err(|e| Error::strategy(e.to_string()))
}

/// Runs the configured algorithm's client step.
pub fn client_step(
    ctx: &StepContext<'_>,
    state: &ClientState,
    msg: &GlobalMsg,
    data: &ClientData<'_>,
) -> Result<(ClientState, ClientMsg)> {
    match ctx.cfg.algorithm {
        Algorithm::FedLap => fedlap_client_step(ctx, state, msg, data),
        Algorithm::FedLapCov => fedlapcov_client_step(ctx, state, msg, data),
        Algorithm::FedLapFunc => fedlapfunc_client_step(ctx, state, msg, data),
        _ => baseline_client_step(ctx, state, msg, data),
    }
}

/// Runs the configured algorithm's server step; `msgs` must hold one message
/// per client for `round`. Messages are reduced in ascending client id.
pub fn server_step(
    cfg: &StrategyConfig,
    state: &mut ServerState,
    round: u32,
    msgs: &[ClientMsg],
) -> Result<GlobalMsg> {
    let ordered = order_messages(msgs, state.clients(), round)?;
    match cfg.algorithm {
        Algorithm::FedLap => {
            state.w_g = fedlap_server_step(&ordered)?;
        }
        Algorithm::FedLapCov => {
            let (s_g, w_g) = fedlapcov_server_step(&ordered, cfg.delta)?;
            state.s_g = Some(s_g);
            state.w_g = w_g;
        }
        Algorithm::FedLapFunc => {
            let (mem, spec) = match (&state.memory, &state.model) {
                (Some(m), Some(s)) => (m, s),
                _ => return Err(Error::config("FedLap-Func needs a memory set and a model")),
            };
            state.w_g = fedlapfunc_server_step(&ordered, mem, spec, cfg, &state.w_g)?;
        }
        _ => baseline_server_step(cfg, state, &ordered)?,
    }
    state.global_msg(round + 1)
}

fn order_messages<'m>(msgs: &'m [ClientMsg], clients: usize, round: u32) -> Result<Vec<&'m ClientMsg>> {
    let mut slots: Vec<Option<&ClientMsg>> = vec![None; clients];
    for m in msgs {
        if m.round != round {
            return Err(Error::strategy(format!(
                "message from client {} is for round {}, expected {round}",
                m.client_id, m.round
            )));
        }
        let slot = slots
            .get_mut(m.client_id as usize)
            .ok_or_else(|| Error::strategy(format!("unknown client id {}", m.client_id)))?;
        if slot.replace(m).is_some() {
            return Err(Error::strategy(format!("duplicate message from client {}", m.client_id)));
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(k, s)| s.ok_or_else(|| Error::strategy(format!("missing message from client {k}"))))
        .collect()
}

pub(crate) fn require<'a, T>(field: &'a Option<T>, what: &str, client: u32) -> Result<&'a T> {
    field
        .as_ref()
        .ok_or_else(|| Error::strategy(format!("client {client} message lacks {what}")))
}
