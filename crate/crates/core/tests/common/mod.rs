#![allow(dead_code)]

use std::sync::Arc;

use fedlap_core::data::{BlobSpec, Dataset, QuadraticLoss, QuadraticSpec, SplitKind};
use fedlap_core::harness::runner::{build_problem, load_dataset, run_client_step, Problem};
use fedlap_core::harness::{DatasetSpec, ExperimentConfig, ModelConfig};
use fedlap_core::local::{DataLoss, LocalSolver, NewtonConfig};
use fedlap_core::model::{row_sums, Batch, ModelKind, ModelSpec, ParamVector, Targets};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use fedlap_core::strategy::{server_step, Algorithm, ClientState, GlobalMsg, ServerState, StrategyConfig};

pub fn quadratic_cfg(alg: Algorithm, clients: usize) -> ExperimentConfig {
    quadratic_cfg_with(alg, clients, QuadraticSpec::default())
}

pub fn quadratic_cfg_with(alg: Algorithm, clients: usize, quadratic: QuadraticSpec) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetSpec::QuadraticClients { quadratic, seed: 0 },
        strategy: StrategyConfig::new(alg),
        local: LocalSolver::Newton(NewtonConfig::default()),
        record_timing: false,
        ..Default::default()
    };
    cfg.split.clients = clients;
    cfg
}

/// 200 training points in 9 dimensions: logistic regression with bias has P = 10.
pub fn logistic_cfg(alg: Algorithm, clients: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetSpec::Blobs {
            blobs: BlobSpec {
                classes: 2,
                dim: 9,
                train_per_class: 100,
                test_per_class: 50,
                separation: 1.0,
            },
            seed: 3,
        },
        model: ModelConfig {
            kind: ModelKind::LogisticBinary,
            hidden_sizes: vec![],
            bias: true,
        },
        strategy: StrategyConfig::new(alg),
        local: LocalSolver::Newton(NewtonConfig::default()),
        record_timing: false,
        ..Default::default()
    };
    cfg.split.clients = clients;
    cfg.split.kind = SplitKind::Homogeneous;
    cfg
}

pub fn problem(cfg: &ExperimentConfig) -> Problem {
    let ds: Option<Arc<Dataset>> = load_dataset(&cfg.dataset).unwrap();
    build_problem(cfg, ds.as_ref(), 0).unwrap()
}

/// Drives rounds by hand so tests can inspect and seed client/server state.
pub struct Driver<'a> {
    pub cfg: &'a ExperimentConfig,
    pub problem: &'a Problem,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub msg: GlobalMsg,
}

impl<'a> Driver<'a> {
    pub fn new(cfg: &'a ExperimentConfig, problem: &'a Problem) -> Self {
        let server = ServerState::new(
            &cfg.strategy,
            problem.init.clone(),
            problem.client_sizes(),
            problem.memory.clone(),
            problem.spec.clone(),
        )
        .unwrap();
        let clients = (0..problem.clients()).map(|k| ClientState::new(k, &problem.init)).collect();
        let msg = server.global_msg(1).unwrap();
        Driver {
            cfg,
            problem,
            server,
            clients,
            msg,
        }
    }

    /// Overrides `w_g` and rebuilds the pending broadcast.
    pub fn set_global(&mut self, w: Vec<f64>) {
        self.server.w_g = ParamVector(w);
        self.msg = self.server.global_msg(self.msg.round).unwrap();
    }

    pub fn round(&mut self) {
        let mut replies = Vec::new();
        for k in 0..self.clients.len() {
            let (next, reply) = run_client_step(self.cfg, self.problem, k, &self.clients[k], &self.msg).unwrap();
            self.clients[k] = next;
            replies.push(reply);
        }
        self.msg = server_step(&self.cfg.strategy, &mut self.server, self.msg.round, &replies).unwrap();
    }
}

pub fn grad(loss: &dyn DataLoss, w: &[f64]) -> Vec<f64> {
    loss.value_and_grad(w, None).unwrap().1
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn scalar_quadratic(curvature: f64, centre: f64) -> QuadraticLoss {
    let a = curvature.sqrt();
    QuadraticLoss::new(ndarray::arr2(&[[a]]), vec![a * centre]).unwrap()
}

/// Logistic, softmax or MLP (`kind` 0, 1, 2) on three inputs.
pub fn spec_for(kind: u8) -> ModelSpec {
    match kind {
        0 => ModelSpec::logistic(3, true),
        1 => ModelSpec::softmax(3, 4, true),
        _ => ModelSpec::mlp(3, vec![4], 3),
    }
}

/// Random parameters and a batch with hard or soft targets and optional weights.
pub fn random_instance(spec: &ModelSpec, seed: u64, n: usize) -> (Vec<f64>, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..spec.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Array2::from_shape_fn((n, spec.input_dim), |_| rng.random_range(-2.0..2.0));
    let c = spec.class_count;
    let targets = if rng.random_bool(0.5) {
        Targets::Hard((0..n).map(|_| rng.random_range(0..c)).collect())
    } else {
        let raw = Array2::from_shape_fn((n, c), |_| rng.random_range(0.05..1.0));
        let sums = row_sums(&raw);
        Targets::Soft(Array2::from_shape_fn((n, c), |(i, k)| raw[[i, k]] / sums[i]))
    };
    let weights = rng
        .random_bool(0.5)
        .then(|| (0..n).map(|_| rng.random_range(0.0..3.0)).collect());
    (w, Batch::new(x, targets, weights, c).unwrap())
}
