use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, ExperimentConfig};
use super::metrics::{trailing_window, RoundRecord, BYTES_PER_SCALAR};
use crate::data::{
    gaussian_blobs, load_csv, load_idx_pair, quadratic_clients, split_dataset, stratified_indices, CsvSchema,
    Dataset, QuadraticClients, ShardAssignment,
};
use crate::error::{Error, Result};
use crate::local::{DataLoss, ModelLoss};
use crate::model::{self, ModelSpec, ParamVector};
use crate::strategy::{
    client_step, server_step, Algorithm, ClientData, ClientMsg, ClientState, GlobalMsg, MemorySet, ServerState,
    StepContext,
};

/// Stream purposes mixed into [`stream_seed`].
pub mod purpose {
    pub const LOCAL: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const MEMORY: u64 = 4;
    pub const DATA: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG seed for (run seed, client, round, purpose).
pub fn stream_seed(seed: u64, client: u64, round: u64, purpose: u64) -> u64 {
    splitmix(splitmix(splitmix(splitmix(seed) ^ purpose) ^ client) ^ round)
}

/// Worker cap from `FEDLAP_WORKERS`, if set.
pub fn env_workers() -> Option<usize> {
    std::env::var("FEDLAP_WORKERS").ok()?.parse().ok().filter(|&n| n > 0)
}

/// Loads the configured dataset; `None` for synthetic quadratics.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Option<Arc<Dataset>>> {
    let ds = match spec {
        DatasetSpec::Csv { path, schema } => load_csv(path, schema)?,
        DatasetSpec::UciCredit {
            path,
            test_fraction,
            split_seed,
        } => load_csv(
            path,
            &CsvSchema {
                test_fraction: *test_fraction,
                split_seed: *split_seed,
                ..CsvSchema::uci_credit()
            },
        )?,
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_fraction,
            ..
        } => {
            if !(*train_fraction > 0.0 && *train_fraction <= 1.0) {
                return Err(Error::config("train_fraction must lie in (0, 1]"));
            }
            load_idx_pair(train_images, train_labels, test_images, test_labels)?
        }
        DatasetSpec::Blobs { blobs, seed } => gaussian_blobs(blobs, *seed)?,
        DatasetSpec::QuadraticClients { .. } => return Ok(None),
    };
    Ok(Some(Arc::new(ds)))
}

/// Everything one seed's run needs: client losses, the split, the memory
/// set and the initial model.
#[derive(Clone, Debug)]
pub struct Problem {
    pub seed: u64,
    pub spec: Option<ModelSpec>,
    pub dataset: Option<Arc<Dataset>>,
    pub assignment: Option<ShardAssignment>,
    pub quadratic: Option<QuadraticClients>,
    pub losses: Vec<Arc<dyn DataLoss>>,
    pub memory: Option<MemorySet>,
    pub init: ParamVector,
    /// Closed-form fixed point, when known.
    pub target: Option<Vec<f64>>,
}

impl Problem {
    pub fn clients(&self) -> usize {
        self.losses.len()
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        self.losses.iter().map(|l| l.len()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.init.len()
    }

    pub fn client_data(&self, k: usize) -> ClientData<'_> {
        ClientData {
            id: k,
            loss: &*self.losses[k],
            model: self.spec.as_ref(),
            memory: self.memory.as_ref(),
        }
    }
}

/// Closed-form fixed point of `alg` on quadratic clients.
pub fn quadratic_fixed_point(cfg: &ExperimentConfig, qc: &QuadraticClients) -> Result<Vec<f64>> {
    let s = &cfg.strategy;
    match s.algorithm {
        Algorithm::FedLap | Algorithm::FedLapCov | Algorithm::FedLapFunc => qc.oracle(s.delta),
        Algorithm::FedDyn => {
            let n: usize = qc.clients.iter().map(|c| c.len()).sum();
            qc.oracle(s.weight_decay * n as f64)
        }
        Algorithm::FedAvg | Algorithm::FedProx | Algorithm::FedAdmm => {
            let scales: Vec<f64> = qc.clients.iter().map(|c| 1.0 / c.len() as f64).collect();
            qc.weighted_oracle(0.0, &scales)
        }
    }
}

pub fn build_problem(cfg: &ExperimentConfig, dataset: Option<&Arc<Dataset>>, seed_index: usize) -> Result<Problem> {
    let seed = *cfg
        .seeds
        .get(seed_index)
        .ok_or_else(|| Error::config(format!("seed index {seed_index} out of range")))?;
    match (&cfg.dataset, dataset) {
        (DatasetSpec::QuadraticClients { quadratic, seed: data_seed }, _) => {
            let qc = quadratic_clients(
                quadratic,
                cfg.split.clients,
                stream_seed(*data_seed, seed, 0, purpose::DATA),
            )?;
            let target = quadratic_fixed_point(cfg, &qc).ok();
            Ok(Problem {
                seed,
                spec: None,
                dataset: None,
                assignment: None,
                losses: qc.clients.iter().map(|c| Arc::new(c.clone()) as Arc<dyn DataLoss>).collect(),
                init: ParamVector::zeros(qc.dim()),
                quadratic: Some(qc),
                memory: None,
                target,
            })
        }
        (_, Some(full)) => {
            let subset = subsample_for_seed(&cfg.dataset, full, seed);
            let ds = subset.as_ref().unwrap_or(full);
            let mut split = cfg.split.clone();
            split.seed = stream_seed(cfg.split.seed, seed, 0, purpose::SPLIT);
            let assignment = split_dataset(&ds.train_labels, ds.class_count, &split)?;
            let spec = cfg.model.build(ds.input_dim(), ds.class_count)?;
            let losses = assignment
                .shards
                .iter()
                .map(|s| Ok(Arc::new(ModelLoss::new(spec.clone(), ds.train_batch(s)?)) as Arc<dyn DataLoss>))
                .collect::<Result<Vec<_>>>()?;
            let init = spec.init_params(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, 0, 0, purpose::INIT)));
            let memory = if cfg.strategy.algorithm == Algorithm::FedLapFunc {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0, 0, purpose::MEMORY));
                Some(MemorySet::select(ds, &assignment, cfg.strategy.memory_per_class, &mut rng)?)
            } else {
                None
            };
            Ok(Problem {
                seed,
                spec: Some(spec),
                dataset: Some(Arc::clone(ds)),
                assignment: Some(assignment),
                quadratic: None,
                losses,
                memory,
                init,
                target: None,
            })
        }
        (_, None) => Err(Error::config("dataset was not loaded")),
    }
}

/// A fresh stratified training subset per run seed when `train_fraction < 1`.
fn subsample_for_seed(spec: &DatasetSpec, ds: &Arc<Dataset>, seed: u64) -> Option<Arc<Dataset>> {
    let DatasetSpec::Idx {
        train_fraction,
        subsample_seed,
        ..
    } = spec
    else {
        return None;
    };
    if *train_fraction >= 1.0 {
        return None;
    }
    let stream = stream_seed(*subsample_seed, seed, 0, purpose::SUBSAMPLE);
    let (keep, _) = stratified_indices(&ds.train_labels, ds.class_count, 1.0 - train_fraction, stream);
    Some(Arc::new(Dataset {
        train_inputs: ds.train_inputs.select(ndarray::Axis(0), &keep),
        train_labels: keep.iter().map(|&i| ds.train_labels[i]).collect(),
        test_inputs: ds.test_inputs.clone(),
        test_labels: ds.test_labels.clone(),
        feature_stats: ds.feature_stats.clone(),
        class_count: ds.class_count,
    }))
}

/// Runs client `k`'s step for the broadcast `msg`.
pub fn run_client_step(
    cfg: &ExperimentConfig,
    problem: &Problem,
    k: usize,
    state: &ClientState,
    msg: &GlobalMsg,
) -> Result<(ClientState, ClientMsg)> {
    let ctx = StepContext {
        cfg: &cfg.strategy,
        solver: &cfg.local,
        n_total: problem.client_sizes().iter().sum(),
        clients: problem.clients(),
        seed: stream_seed(problem.seed, k as u64, u64::from(msg.round), purpose::LOCAL),
    };
    client_step(&ctx, state, msg, &problem.client_data(k))
}

/// Moves messages between the server loop and the clients.
pub trait RoundTransport {
    fn begin(&mut self, cfg: &ExperimentConfig, problem: &Problem, seed_index: usize) -> Result<()>;
    fn exchange(&mut self, cfg: &ExperimentConfig, problem: &Problem, msg: &GlobalMsg) -> Result<Vec<ClientMsg>>;
    fn finish(&mut self) -> Result<()>;
}

/// Clients run in this process on a rayon pool.
pub struct InProcess {
    pool: rayon::ThreadPool,
    states: Vec<ClientState>,
}

impl InProcess {
    pub fn new(workers: Option<usize>) -> Result<Self> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers.or_else(env_workers) {
            b = b.num_threads(n);
        }
        Ok(InProcess {
            pool: b.build().map_err(|e| Error::config(format!("worker pool: {e}")))?,
            states: Vec::new(),
        })
    }
}

impl RoundTransport for InProcess {
    fn begin(&mut self, _cfg: &ExperimentConfig, problem: &Problem, _seed_index: usize) -> Result<()> {
        self.states = (0..problem.clients()).map(|k| ClientState::new(k, &problem.init)).collect();
        Ok(())
    }

    fn exchange(&mut self, cfg: &ExperimentConfig, problem: &Problem, msg: &GlobalMsg) -> Result<Vec<ClientMsg>> {
        let states = &self.states;
        let results: Vec<Result<(ClientState, ClientMsg)>> = self.pool.install(|| {
            states
                .par_iter()
                .enumerate()
                .map(|(k, st)| run_client_step(cfg, problem, k, st, msg))
                .collect()
        });
        let mut replies = Vec::with_capacity(results.len());
        for (k, r) in results.into_iter().enumerate() {
            let (st, reply) = r?;
            self.states[k] = st;
            replies.push(reply);
        }
        Ok(replies)
    }

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Evaluation of a global model; never mutates anything.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub test_accuracy: Option<f64>,
    pub test_nll: Option<f64>,
    pub train_nll: f64,
    pub client_losses: Vec<f64>,
    pub oracle_gap: Option<f64>,
}

pub fn evaluate(problem: &Problem, w: &[f64]) -> Result<Evaluation> {
    let mut total = 0.0;
    let mut n = 0;
    let mut client_losses = Vec::with_capacity(problem.clients());
    for loss in &problem.losses {
        let (v, _) = loss.value_and_grad(w, None)?;
        total += v;
        n += loss.len();
        client_losses.push(v / loss.len().max(1) as f64);
    }
    let (mut test_accuracy, mut test_nll) = (None, None);
    if let (Some(ds), Some(spec)) = (&problem.dataset, &problem.spec) {
        if !ds.test_labels.is_empty() {
            let probs = model::predict_proba(spec, w, ds.test_inputs.view())?;
            test_accuracy = Some(model::accuracy(&probs, &ds.test_labels));
            test_nll = Some(model::mean_nll(&probs, &ds.test_labels));
        }
    }
    let oracle_gap = problem
        .target
        .as_ref()
        .map(|t| t.iter().zip(w).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())));
    Ok(Evaluation {
        test_accuracy,
        test_nll,
        train_nll: total / n.max(1) as f64,
        client_losses,
        oracle_gap,
    })
}

/// A seed that stopped with an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub seed: u64,
    pub round: u32,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub failures: Vec<FailureRecord>,
}

impl RunOutput {
    pub fn records_for(&self, seed: u64) -> Vec<RoundRecord> {
        self.records.iter().filter(|r| r.seed == seed).cloned().collect()
    }
}

/// Runs the round loop for one seed, appending records as it goes. On error
/// returns the round that failed.
pub fn run_seed(
    cfg: &ExperimentConfig,
    problem: &Problem,
    seed_index: usize,
    transport: &mut dyn RoundTransport,
    records: &mut Vec<RoundRecord>,
) -> std::result::Result<(), (u32, Error)> {
    let at = |round: u32| move |e: Error| (round, e);
    let sizes = problem.client_sizes();
    let k = sizes.len();
    let mut server = ServerState::new(
        &cfg.strategy,
        problem.init.clone(),
        sizes,
        problem.memory.clone(),
        problem.spec.clone(),
    )
    .map_err(at(0))?;

    let mut history = Vec::with_capacity(cfg.rounds as usize + 1);
    let mut emit = |round: u32, eval: Evaluation, up: u64, down: u64, wall_ms: f64, w: &[f64]| {
        history.push(eval.test_accuracy.unwrap_or(f64::NAN));
        let keep = round == 0 || round % cfg.metric_cadence == 0 || round == cfg.rounds;
        if !keep {
            return;
        }
        let (avg, max) = trailing_window(&history, round as usize);
        let has_acc = eval.test_accuracy.is_some();
        records.push(RoundRecord {
            seed: problem.seed,
            round,
            test_accuracy: eval.test_accuracy,
            test_nll: eval.test_nll,
            train_nll: eval.train_nll,
            client_losses: eval.client_losses,
            bytes_up: up,
            bytes_down: down,
            wall_ms: if cfg.record_timing { wall_ms } else { 0.0 },
            acc_avg_last3: has_acc.then_some(avg),
            acc_max_last3: has_acc.then_some(max),
            oracle_gap: eval.oracle_gap,
            w_g: cfg.record_params.then(|| w.to_vec()),
        });
    };

    emit(0, evaluate(problem, &server.w_g).map_err(at(0))?, 0, 0, 0.0, &server.w_g);
    transport.begin(cfg, problem, seed_index).map_err(at(0))?;
    let mut msg = server.global_msg(1).map_err(at(1))?;
    for round in 1..=cfg.rounds {
        let start = Instant::now();
        let replies = transport.exchange(cfg, problem, &msg).map_err(at(round))?;
        let up: u64 = replies.iter().map(|m| m.payload_scalars() as u64).sum::<u64>() * BYTES_PER_SCALAR;
        let down = msg.payload_scalars() as u64 * k as u64 * BYTES_PER_SCALAR;
        msg = server_step(&cfg.strategy, &mut server, round, &replies).map_err(at(round))?;
        let wall = start.elapsed().as_secs_f64() * 1e3;
        let eval = evaluate(problem, &server.w_g).map_err(at(round))?;
        if round % cfg.metric_cadence == 0 || round == cfg.rounds {
            log::info!(
                "seed {} round {round}: train_nll {:.5} test_acc {}",
                problem.seed,
                eval.train_nll,
                eval.test_accuracy.map_or("-".into(), |a| format!("{:.4}", a))
            );
        }
        emit(round, eval, up, down, wall, &server.w_g);
    }
    transport.finish().map_err(at(cfg.rounds))?;
    Ok(())
}

/// Runs every seed with the given transport.
pub fn run_with_transport(cfg: &ExperimentConfig, transport: &mut dyn RoundTransport) -> Result<RunOutput> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.dataset)?;
    let mut out = RunOutput::default();
    for i in 0..cfg.seeds.len() {
        let seed = cfg.seeds[i];
        let result = build_problem(cfg, dataset.as_ref(), i)
            .map_err(|e| (0, e))
            .and_then(|problem| run_seed(cfg, &problem, i, transport, &mut out.records));
        if let Err((round, e)) = result {
            log::error!("seed {seed} failed at round {round}: {e}");
            out.failures.push(FailureRecord {
                seed,
                round,
                error: e.to_string(),
            });
        }
    }
    Ok(out)
}

/// Runs the experiment in-process with the worker cap from `FEDLAP_WORKERS`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment_with_workers(cfg, None)
}

pub fn run_experiment_with_workers(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<RunOutput> {
    let mut transport = InProcess::new(workers)?;
    run_with_transport(cfg, &mut transport)
}
