//! One PASS/FAIL line per acceptance criterion.
//!
//! `cargo test --test acceptance -- --nocapture` prints the report; the slow
//! MNIST/FMNIST checks are `#[ignore]`d and need `FEDLAP_MNIST_DIR` /
//! `FEDLAP_FMNIST_DIR` pointing at the four IDX files.

mod common;

use std::fmt::Display;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use common::*;
use fedlap_core::data::{
    dirichlet_split, load_csv, split_dataset, BlobSpec, CsvSchema, QuadraticSpec, SplitKind, SplitSpec,
    UCI_CREDIT_LAYOUT,
};
use fedlap_core::harness::metrics::BYTES_PER_SCALAR;
use fedlap_core::harness::runner::{quadratic_fixed_point, Problem};
use fedlap_core::harness::{
    decode_msg, encode_msg, oracle_for_problem, oracle_sweep, run_experiment, tcp_client, tcp_serve_on, DatasetSpec,
    ExperimentConfig, ModelConfig, RunOutput, WireMsg,
};
use fedlap_core::local::{AdamConfig, LocalSolver};
use fedlap_core::model::{diag_ggn, nll_and_grad, DiagCurvature, ModelKind, ParamVector};
use fedlap_core::strategy::{Algorithm, ClientMsg, GlobalMsg, Rho};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ok<T, E: Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Runs `f`, enforces the runtime budget and prints the criterion's line.
fn criterion(id: &str, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let outcome = outcome.and_then(|detail| {
        if elapsed <= budget {
            Ok(detail)
        } else {
            Err(format!("{detail}; runtime {elapsed:.1?} exceeds {budget:?}"))
        }
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    report(&format!("{tag} {id} {name} [{elapsed:.2?}]: {detail}"));
    outcome.is_ok()
}

/// Writes straight to stdout so the report shows even when test output is captured.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn credit_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/uci_credit/crx.data")
}

fn first_round_within(out: &RunOutput, seed: u64, tol: f64) -> Option<u32> {
    out.records_for(seed)
        .iter()
        .find(|r| r.oracle_gap.is_some_and(|g| g <= tol))
        .map(|r| r.round)
}

// ---------------------------------------------------------------- criterion 1

const ORACLE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn quadratic_convergence() -> Outcome {
    let mut lap = quadratic_cfg(Algorithm::FedLap, 4);
    lap.strategy.rho = Some(Rho::InverseClients);
    lap.rounds = 200;
    lap.seeds = ORACLE_SEEDS.to_vec();
    let out = ok(run_experiment(&lap))?;
    ensure!(out.failures.is_empty(), "fedlap failures: {:?}", out.failures);
    let mut lap_rounds = Vec::new();
    for &s in &lap.seeds {
        // The recorded gap is against the closed-form normal equations.
        let r = first_round_within(&out, s, 1e-6).ok_or(format!("fedlap seed {s} not within 1e-6 by round 200"))?;
        lap_rounds.push(r);
    }
    ensure!(problem(&lap).param_count() == 8, "P != 8");

    // FedADMM's mean-loss clients need unit-scale data to converge at alpha = 1.
    let quadratic = QuadraticSpec {
        entry_scale: Some(1.0),
        ..Default::default()
    };
    let mut admm = quadratic_cfg_with(Algorithm::FedAdmm, 4, quadratic);
    admm.strategy.alpha = 1.0;
    admm.rounds = 200;
    admm.seeds = ORACLE_SEEDS.to_vec();
    let out = ok(run_experiment(&admm))?;
    ensure!(out.failures.is_empty(), "fedadmm failures: {:?}", out.failures);
    let mut admm_rounds = Vec::new();
    for &s in &admm.seeds {
        let r = first_round_within(&out, s, 1e-6).ok_or(format!("fedadmm seed {s} not within 1e-6 by round 200"))?;
        admm_rounds.push(r);
    }

    // Diagonal quadratics make the diagonal curvature exact.
    let quadratic = QuadraticSpec {
        diagonal: true,
        ..Default::default()
    };
    let mut cov = quadratic_cfg_with(Algorithm::FedLapCov, 4, quadratic);
    cov.strategy.rho = Some(Rho::Fixed { value: 1.0 });
    cov.rounds = 5;
    cov.seeds = ORACLE_SEEDS.to_vec();
    let out = ok(run_experiment(&cov))?;
    ensure!(out.failures.is_empty(), "fedlap_cov failures: {:?}", out.failures);
    let mut cov_rounds = Vec::new();
    for &s in &cov.seeds {
        let r = first_round_within(&out, s, 1e-6).ok_or(format!("fedlap_cov seed {s} not within 1e-6 by round 5"))?;
        cov_rounds.push(r);
    }
    Ok(format!(
        "rounds to 1e-6 over seeds {:?}: fedlap {lap_rounds:?}, fedadmm {admm_rounds:?}, fedlap_cov {cov_rounds:?}",
        ORACLE_SEEDS
    ))
}

// ---------------------------------------------------------------- criterion 2

/// Seeds the FedLap fixed point, runs one round and returns the largest change.
fn fedlap_fixed_point_residual(cfg: &ExperimentConfig, p: &Problem, w_star: &[f64]) -> Result<f64, String> {
    let delta = cfg.strategy.delta;
    let mut d = Driver::new(cfg, p);
    d.set_global(w_star.to_vec());
    for (k, c) in d.clients.iter_mut().enumerate() {
        c.w = ParamVector(w_star.to_vec());
        c.v = ParamVector(grad(&*p.losses[k], w_star).iter().map(|g| -g / delta).collect());
    }
    let before: Vec<ParamVector> = d.clients.iter().map(|c| c.v.clone()).collect();
    d.round();
    let mut worst = max_abs_diff(&d.server.w_g, w_star);
    for (c, v) in d.clients.iter().zip(&before) {
        worst = worst.max(max_abs_diff(&c.v, v));
    }
    // The server output is the exact site sum in client order.
    let mut sum = vec![0.0; w_star.len()];
    for c in &d.clients {
        sum.iter_mut().zip(c.v.iter()).for_each(|(s, v)| *s += v);
    }
    ensure!(d.server.w_g.0 == sum, "w_g is not the exact sum of sites");
    Ok(worst)
}

fn fixed_points() -> Outcome {
    let quad = quadratic_cfg(Algorithm::FedLap, 4);
    let p = problem(&quad);
    let w_star = ok(p.quadratic.as_ref().unwrap().oracle(quad.strategy.delta))?;
    let lap_quad = fedlap_fixed_point_residual(&quad, &p, &w_star)?;
    ensure!(lap_quad <= 1e-8, "fedlap quadratic residual {lap_quad:e} > 1e-8");

    let logit = logistic_cfg(Algorithm::FedLap, 4);
    let p = problem(&logit);
    ensure!(p.param_count() == 10, "P = {}", p.param_count());
    let n: usize = p.client_sizes().iter().sum();
    ensure!(n == 200, "N = {n}");
    let w_star = ok(oracle_for_problem(&logit, &p, logit.strategy.delta))?.w;
    let lap_logit = fedlap_fixed_point_residual(&logit, &p, &w_star)?;
    ensure!(lap_logit <= 1e-5, "fedlap logistic residual {lap_logit:e} > 1e-5");

    let admm = quadratic_cfg(Algorithm::FedAdmm, 4);
    let p = problem(&admm);
    let w0 = ok(quadratic_fixed_point(&admm, p.quadratic.as_ref().unwrap()))?;
    let mut d = Driver::new(&admm, &p);
    d.set_global(w0.clone());
    for (k, c) in d.clients.iter_mut().enumerate() {
        let n_k = p.losses[k].len() as f64;
        c.w = ParamVector(w0.clone());
        c.v = ParamVector(grad(&*p.losses[k], &w0).iter().map(|g| -g / n_k).collect());
        d.server.duals[k] = c.v.clone();
    }
    let before: Vec<ParamVector> = d.clients.iter().map(|c| c.v.clone()).collect();
    d.round();
    let mut admm_res = max_abs_diff(&d.server.w_g, &w0);
    for (k, v) in before.iter().enumerate() {
        admm_res = admm_res.max(max_abs_diff(&d.clients[k].v, v));
        admm_res = admm_res.max(max_abs_diff(&d.server.duals[k], v));
    }
    ensure!(admm_res <= 1e-8, "fedadmm quadratic residual {admm_res:e} > 1e-8");
    Ok(format!(
        "residuals: fedlap quadratic {lap_quad:.1e}, fedlap logistic {lap_logit:.1e}, fedadmm quadratic {admm_res:.1e}"
    ))
}

// ---------------------------------------------------------------- criterion 3

fn blobs_logistic(alg: Algorithm) -> ExperimentConfig {
    let mut cfg = logistic_cfg(alg, 3);
    cfg.split.kind = SplitKind::Dirichlet;
    cfg.rounds = 10;
    cfg.seeds = vec![0, 1];
    cfg.record_params = true;
    cfg
}

fn reductions() -> Outcome {
    let mut cov = quadratic_cfg(Algorithm::FedLapCov, 4);
    cov.strategy.zero_curvature = true;
    cov.strategy.delta = 2.0;
    cov.strategy.rho = Some(Rho::InverseClients);
    let mut lap = cov.clone();
    lap.strategy.algorithm = Algorithm::FedLap;
    let p = problem(&cov);
    let (mut a, mut b) = (Driver::new(&cov, &p), Driver::new(&lap, &p));
    let mut cov_gap: f64 = 0.0;
    for _ in 0..20 {
        a.round();
        b.round();
        cov_gap = cov_gap.max(max_abs_diff(&a.server.w_g, &b.server.w_g));
    }
    ensure!(cov_gap <= 1e-10, "fedlap_cov(zero curvature) vs fedlap gap {cov_gap:e}");

    let mut func = blobs_logistic(Algorithm::FedLapFunc);
    func.strategy.memory_per_class = 0;
    let mut lap = func.clone();
    lap.strategy.algorithm = Algorithm::FedLap;
    let (f, l) = (ok(run_experiment(&func))?, ok(run_experiment(&lap))?);
    ensure!(f.failures.is_empty() && l.failures.is_empty(), "failures in the memory-free runs");
    let mut func_gap: f64 = 0.0;
    for (x, y) in f.records.iter().zip(&l.records) {
        func_gap = func_gap.max(max_abs_diff(x.w_g.as_ref().unwrap(), y.w_g.as_ref().unwrap()));
    }
    ensure!(f.records.len() == l.records.len(), "record counts differ");
    ensure!(func_gap <= 1e-6, "fedlap_func(no memory) vs fedlap gap {func_gap:e}");

    let mut prox = blobs_logistic(Algorithm::FedProx);
    prox.strategy.alpha = 0.0;
    prox.local = LocalSolver::Adam(AdamConfig {
        learning_rate: 1e-2,
        epochs: 2,
        batch_size: Some(8),
        ..Default::default()
    });
    let mut avg = prox.clone();
    avg.strategy.algorithm = Algorithm::FedAvg;
    let (x, y) = (ok(run_experiment(&prox))?, ok(run_experiment(&avg))?);
    let bitwise = x.records.iter().zip(&y.records).all(|(r, s)| {
        let (u, v) = (r.w_g.as_ref().unwrap(), s.w_g.as_ref().unwrap());
        u.iter().zip(v).all(|(a, b)| a.to_bits() == b.to_bits())
    });
    ensure!(bitwise && x.records == y.records, "fedprox(0) differs from fedavg");
    Ok(format!(
        "cov gap {cov_gap:.1e} over 20 rounds, func gap {func_gap:.1e}, fedprox(0) == fedavg bitwise over {} records",
        x.records.len()
    ))
}

// ---------------------------------------------------------------- criteria 4, 5

fn credit_cfg(alg: Algorithm) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetSpec::UciCredit {
            path: credit_path(),
            test_fraction: 0.2,
            split_seed: 0,
        },
        model: ModelConfig {
            kind: ModelKind::LogisticBinary,
            hidden_sizes: vec![],
            bias: true,
        },
        strategy: fedlap_core::strategy::StrategyConfig::new(alg),
        record_timing: false,
        ..Default::default()
    };
    cfg.split.kind = SplitKind::Homogeneous;
    cfg
}

fn two_client_credit() -> Outcome {
    let mut cfg = credit_cfg(Algorithm::FedLap);
    cfg.split.clients = 2;
    cfg.strategy.delta = 1.0;
    cfg.local = LocalSolver::Adam(AdamConfig::full_batch(1e-3, 1000));
    cfg.rounds = 3;
    let out = ok(run_experiment(&cfg))?;
    ensure!(out.failures.is_empty(), "failures: {:?}", out.failures);
    let oracles = ok(oracle_sweep(&cfg, &[0.0, 1.0]))?;
    let (o0, o1) = (&oracles[0], &oracles[1]);
    let records = out.records_for(cfg.seeds[0]);
    let by = |r: u32| records.iter().find(|x| x.round == r).unwrap().train_nll;
    let rel = |r: u32| (by(r) - o1.train_nll).abs() / o1.train_nll;
    let test0 = o0.test_nll.ok_or("no test set")?;
    let test1 = o1.test_nll.ok_or("no test set")?;
    let summary = format!(
        "train NLL rel. gap round 2 {:.2}%, round 3 {:.2}%; oracle test NLL delta=0 {test0:.3}, delta=1 {test1:.3}",
        100.0 * rel(2),
        100.0 * rel(3)
    );
    ensure!(rel(3) <= 0.01, "{summary}");
    ensure!(test0 - test1 >= 0.05, "{summary}");
    Ok(summary)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean over seeds of acc_avg_last3 at each requested round.
fn seed_means(out: &RunOutput, rounds: &[u32]) -> Vec<f64> {
    rounds
        .iter()
        .map(|&r| {
            let v: Vec<f64> = out
                .records
                .iter()
                .filter(|x| x.round == r)
                .filter_map(|x| x.acc_avg_last3)
                .collect();
            mean(&v)
        })
        .collect()
}

/// Best grid point per requested round (the tables report each round's best setting).
fn sweep_best(
    alg: Algorithm,
    grid: &[(usize, f64)],
    rounds: &[u32],
    make: impl Fn(Algorithm, usize, f64) -> ExperimentConfig,
) -> Result<Vec<(f64, usize, f64)>, String> {
    let mut best = vec![(f64::NEG_INFINITY, 0, 0.0); rounds.len()];
    for &(epochs, delta) in grid {
        let cfg = make(alg, epochs, delta);
        let out = ok(run_experiment(&cfg))?;
        ensure!(out.failures.is_empty(), "{alg} E={epochs} delta={delta}: {:?}", out.failures);
        for (b, m) in best.iter_mut().zip(seed_means(&out, rounds)) {
            if m > b.0 {
                *b = (m, epochs, delta);
            }
        }
    }
    Ok(best)
}

fn heterogeneous_credit() -> Outcome {
    let make = |alg, epochs, delta| {
        let mut cfg = credit_cfg(alg);
        cfg.split.kind = SplitKind::UciCreditFixed;
        cfg.split.clients = 10;
        cfg.strategy.delta = delta;
        cfg.local = LocalSolver::Adam(AdamConfig {
            learning_rate: 1e-3,
            epochs,
            batch_size: Some(4),
            ..Default::default()
        });
        cfg.rounds = 50;
        cfg.seeds = vec![0, 1, 2];
        cfg
    };
    let grid: Vec<(usize, f64)> = [5, 10, 20]
        .into_iter()
        .flat_map(|e| [10.0, 1.0, 0.1].map(|d| (e, d)))
        .collect();
    let rounds = [25, 50];
    let lap = sweep_best(Algorithm::FedLap, &grid, &rounds, make)?;
    let cov = sweep_best(Algorithm::FedLapCov, &grid, &rounds, make)?;
    let show = |b: &(f64, usize, f64)| format!("{:.1}% (E={}, delta={})", 100.0 * b.0, b.1, b.2);
    let summary = format!(
        "fedlap r50 {}; round 25: fedlap_cov {} vs fedlap {}",
        show(&lap[1]),
        show(&cov[0]),
        show(&lap[0])
    );
    ensure!(lap[1].0 >= 0.795, "{summary}");
    ensure!(cov[0].0 >= lap[0].0, "{summary}");
    Ok(summary)
}

// ---------------------------------------------------------------- criterion 7

fn softmax_blobs(alg: Algorithm) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetSpec::Blobs {
            blobs: BlobSpec {
                classes: 3,
                dim: 4,
                train_per_class: 40,
                test_per_class: 10,
                separation: 3.0,
            },
            seed: 2,
        },
        model: ModelConfig {
            kind: ModelKind::SoftmaxLinear,
            hidden_sizes: vec![],
            bias: true,
        },
        strategy: fedlap_core::strategy::StrategyConfig::new(alg),
        local: LocalSolver::Adam(AdamConfig {
            learning_rate: 1e-2,
            epochs: 1,
            batch_size: Some(16),
            ..Default::default()
        }),
        rounds: 2,
        record_timing: false,
        ..Default::default()
    };
    cfg.split.kind = SplitKind::Homogeneous;
    cfg.split.clients = 4;
    cfg.strategy.memory_per_class = 1;
    cfg.strategy.server_opt = AdamConfig::full_batch(1e-2, 50);
    cfg
}

fn random_vec(rng: &mut ChaCha8Rng, max: usize) -> Vec<f64> {
    let n = rng.random_range(0..max);
    (0..n)
        .map(|_| match rng.random_range(0..8) {
            0 => f64::from_bits(rng.random()),
            1 => f64::INFINITY,
            2 => -0.0,
            _ => rng.random_range(-1e6..1e6),
        })
        .collect()
}

fn maybe(rng: &mut ChaCha8Rng, max: usize) -> Option<Vec<f64>> {
    rng.random_bool(0.5).then(|| random_vec(rng, max))
}

fn random_msg(rng: &mut ChaCha8Rng) -> WireMsg {
    match rng.random_range(0..5) {
        0 => WireMsg::Global(GlobalMsg {
            round: rng.random(),
            w_g: ParamVector(random_vec(rng, 40)),
            s_g: maybe(rng, 40).map(DiagCurvature),
            soft_labels: maybe(rng, 60),
        }),
        1 => WireMsg::Client(ClientMsg {
            client_id: rng.random_range(0..u32::MAX),
            round: rng.random(),
            v: maybe(rng, 40).map(ParamVector),
            precision: maybe(rng, 40).map(DiagCurvature),
            soft_labels: maybe(rng, 60),
            w: maybe(rng, 40).map(ParamVector),
        }),
        2 => WireMsg::Hello {
            client_id: rng.random_range(0..u32::MAX),
            n_k: rng.random_range(0..1 << 52),
        },
        3 => WireMsg::Begin { seed_index: rng.random() },
        _ => WireMsg::Finish,
    }
}

fn accounting_and_protocol() -> Outcome {
    let mut counts = Vec::new();
    for alg in [Algorithm::FedLap, Algorithm::FedLapCov, Algorithm::FedLapFunc] {
        let cfg = softmax_blobs(alg);
        let p = problem(&cfg);
        let (k, param, c) = (p.clients() as u64, p.param_count() as u64, 3u64);
        let per_client = match alg {
            Algorithm::FedLap => param,
            Algorithm::FedLapCov => 2 * param,
            _ => param + c * c,
        };
        let out = ok(run_experiment(&cfg))?;
        ensure!(out.failures.is_empty(), "{alg}: {:?}", out.failures);
        for r in out.records.iter().filter(|r| r.round > 0) {
            ensure!(
                r.bytes_up == k * per_client * BYTES_PER_SCALAR,
                "{alg} round {}: {} bytes up, expected {} scalars per client",
                r.round,
                r.bytes_up,
                per_client
            );
        }
        counts.push(format!("{alg} {per_client}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let msg = random_msg(&mut rng);
        let bytes = encode_msg(&msg);
        let back = ok(decode_msg(&bytes))?;
        ensure!(encode_msg(&back) == bytes, "message {i} did not round-trip");
    }

    let mut cfg = quadratic_cfg(Algorithm::FedLap, 3);
    cfg.rounds = 10;
    cfg.seeds = vec![0, 1];
    let listener = ok(TcpListener::bind("127.0.0.1:0"))?;
    let addr = ok(listener.local_addr())?;
    let timeout = Duration::from_secs(20);
    let server_cfg = cfg.clone();
    let server = thread::spawn(move || tcp_serve_on(&server_cfg, listener, timeout));
    let clients: Vec<_> = (0..cfg.split.clients)
        .map(|id| {
            let c = cfg.clone();
            thread::spawn(move || tcp_client(&c, addr, id, timeout))
        })
        .collect();
    for c in clients {
        ok(c.join().map_err(|_| "client thread panicked"))?.map_err(|e| e.to_string())?;
    }
    let tcp = ok(server.join().map_err(|_| "server thread panicked"))?.map_err(|e| e.to_string())?;
    ensure!(tcp == ok(run_experiment(&cfg))?, "TCP results differ from in-process results");
    Ok(format!(
        "scalars per client per round (P = {}, C = 3): {}; 1000 wire round-trips; TCP == in-process",
        problem(&softmax_blobs(Algorithm::FedLap)).param_count(),
        counts.join(", ")
    ))
}

// ---------------------------------------------------------------- criterion 8

fn gradients_and_curvature() -> Outcome {
    let mut worst: f64 = 0.0;
    for kind in 0..3u8 {
        let spec = spec_for(kind);
        for seed in 0..30u64 {
            let (w, batch) = random_instance(&spec, seed * 3 + u64::from(kind), 1 + (seed % 7) as usize);
            let (_, g) = ok(nll_and_grad(&spec, &w, &batch))?;
            let eps = 1e-4;
            for j in 0..w.len() {
                let (mut up, mut down) = (w.clone(), w.clone());
                up[j] += eps;
                down[j] -= eps;
                let fd = (ok(nll_and_grad(&spec, &up, &batch))?.0 - ok(nll_and_grad(&spec, &down, &batch))?.0)
                    / (2.0 * eps);
                let rel = (fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1.0);
                worst = worst.max(rel);
            }
            let x = batch.inputs.view();
            let half = x.nrows() / 2;
            let whole = ok(diag_ggn(&spec, &w, x))?;
            let a = ok(diag_ggn(&spec, &w, x.slice(ndarray::s![..half, ..])))?;
            let b = ok(diag_ggn(&spec, &w, x.slice(ndarray::s![half.., ..])))?;
            ensure!(whole.iter().all(|&d| d >= 0.0), "negative curvature for kind {kind}");
            for j in 0..w.len() {
                ensure!(
                    (whole[j] - a[j] - b[j]).abs() <= 1e-12 * (1.0 + whole[j].abs()),
                    "curvature not additive for kind {kind}"
                );
            }
        }
    }
    ensure!(worst <= 1e-5, "worst relative finite-difference error {worst:e}");

    // Heterogeneous logistic training on the fixed credit split.
    let mut cfg = credit_cfg(Algorithm::FedLapCov);
    cfg.split.kind = SplitKind::UciCreditFixed;
    cfg.split.clients = 10;
    cfg.local = LocalSolver::Adam(AdamConfig {
        learning_rate: 1e-3,
        epochs: 2,
        batch_size: Some(4),
        ..Default::default()
    });
    let p = problem(&cfg);
    let delta = cfg.strategy.delta;
    let mut d = Driver::new(&cfg, &p);
    let mut min_s_k = f64::INFINITY;
    for round in 1..=50 {
        let prev: Vec<DiagCurvature> = d.clients.iter().map(|c| c.precision.clone()).collect();
        let s_g = d.msg.s_g.clone().unwrap();
        d.round();
        for (k, c) in d.clients.iter().enumerate() {
            ensure!(c.precision.iter().all(|&v| v >= 0.0), "V_{k} < 0 at round {round}");
            let h = ok(p.losses[k].diag_curvature(&c.w))?;
            for j in 0..h.len() {
                let s_k = h[j] - prev[k][j] + s_g[j];
                min_s_k = min_s_k.min(s_k);
                ensure!(s_k >= 0.0, "S_{k} < 0 at round {round}");
            }
        }
        ensure!(
            d.msg.s_g.as_ref().unwrap().iter().all(|&s| s >= delta),
            "S_g < delta at round {round}"
        );
    }
    Ok(format!(
        "worst FD error {worst:.1e} over 90 instances; PSD chain held for 50 rounds (min S_k {min_s_k:.3})"
    ))
}

// ---------------------------------------------------------------- criterion 9

fn splitters() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut exhausted = 0;
    for i in 0..1000 {
        let c = rng.random_range(1..11);
        let k = rng.random_range(1..21);
        let n = rng.random_range(20 * k..=2000);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let spec = SplitSpec {
            kind: SplitKind::Dirichlet,
            clients: k,
            alpha1: rng.random_range(0.3..5.0),
            alpha2: rng.random_range(0.1..5.0),
            seed: rng.random(),
            shards: None,
        };
        // Repeatedly empty clients end in the documented retry error.
        let a = match dirichlet_split(&labels, c, &spec) {
            Ok(a) => a,
            Err(e) if e.to_string().contains("stayed empty") => {
                exhausted += 1;
                continue;
            }
            Err(e) => return Err(format!("instance {i}: {e}")),
        };
        let mut seen = vec![0u8; n];
        a.shards.iter().flatten().for_each(|&j| seen[j] += 1);
        ensure!(seen.iter().all(|&s| s == 1), "instance {i}: not a partition");
        ensure!(a.shards.len() == k && a.shards.iter().all(|s| !s.is_empty()), "instance {i}: empty client");
        for (shard, counts) in a.shards.iter().zip(&a.per_class_counts) {
            for (cls, &count) in counts.iter().enumerate() {
                ensure!(
                    shard.iter().filter(|&&j| labels[j] == cls).count() == count,
                    "instance {i}: per-class counts disagree"
                );
            }
        }
        ensure!(a == ok(dirichlet_split(&labels, c, &spec))?, "instance {i}: not deterministic");
    }

    let ds = ok(load_csv(credit_path(), &CsvSchema::uci_credit()))?;
    let spec = SplitSpec {
        kind: SplitKind::UciCreditFixed,
        clients: 10,
        ..Default::default()
    };
    let a = ok(split_dataset(&ds.train_labels, 2, &spec))?;
    ensure!(a == ok(split_dataset(&ds.train_labels, 2, &spec))?, "fixed split not deterministic");
    let mut rates = Vec::new();
    for (k, &(n, pos)) in UCI_CREDIT_LAYOUT.iter().enumerate() {
        ensure!(a.shards[k].len() == n, "client {k} has {} points, expected {n}", a.shards[k].len());
        ensure!(a.per_class_counts[k][1] == pos, "client {k} positives");
        rates.push((n, pos as f64 / n as f64));
    }
    let small = rates.iter().filter(|r| r.0 == 36).count();
    let large = rates.iter().filter(|r| r.0 == 67).count();
    ensure!(small == 5 && large == 5, "expected five 36-point and five 67-point clients");
    let rate = |size| rates.iter().find(|r| r.0 == size).unwrap().1 * 100.0;
    ensure!((rate(36) - 6.0).abs() < 0.5 && (rate(67) - 66.0).abs() < 0.5, "positive rates off");
    Ok(format!(
        "1000 Dirichlet instances ({} exhausted retries, rest partitioned deterministically); credit split 5x36 ({:.1}% positive), 5x67 ({:.1}% positive)",
        exhausted,
        rate(36),
        rate(67)
    ))
}

// ---------------------------------------------------------------- criterion 6 (slow)

fn idx_dataset(dir: &Path, train_fraction: f64) -> DatasetSpec {
    DatasetSpec::Idx {
        train_images: dir.join("train-images-idx3-ubyte"),
        train_labels: dir.join("train-labels-idx1-ubyte"),
        test_images: dir.join("t10k-images-idx3-ubyte"),
        test_labels: dir.join("t10k-labels-idx1-ubyte"),
        train_fraction,
        subsample_seed: 0,
    }
}

fn mlp_cfg(dataset: DatasetSpec, alg: Algorithm, epochs: usize, delta: f64) -> ExperimentConfig {
    ExperimentConfig {
        dataset,
        model: ModelConfig {
            kind: ModelKind::Mlp,
            hidden_sizes: vec![200, 100],
            bias: true,
        },
        strategy: fedlap_core::strategy::StrategyConfig {
            delta,
            ..fedlap_core::strategy::StrategyConfig::new(alg)
        },
        local: LocalSolver::Adam(AdamConfig {
            learning_rate: 1e-3,
            epochs,
            batch_size: Some(32),
            ..Default::default()
        }),
        rounds: 10,
        seeds: vec![0, 1, 2],
        record_timing: false,
        ..Default::default()
    }
}

fn env_dir(var: &str) -> Result<PathBuf, String> {
    std::env::var_os(var)
        .map(PathBuf::from)
        .ok_or(format!("set {var} to a directory with the four IDX files"))
}

fn mnist_homogeneous() -> Outcome {
    let dir = env_dir("FEDLAP_MNIST_DIR")?;
    let mut cfg = mlp_cfg(idx_dataset(&dir, 1.0), Algorithm::FedLap, 5, 0.1);
    cfg.split.kind = SplitKind::Homogeneous;
    cfg.split.clients = 10;
    let out = ok(run_experiment(&cfg))?;
    ensure!(out.failures.is_empty(), "failures: {:?}", out.failures);
    let acc = seed_means(&out, &[10])[0];
    let summary = format!("fedlap round-10 acc_avg_last3 {:.1}%", 100.0 * acc);
    ensure!(acc >= 0.973, "{summary}");
    Ok(summary)
}

fn fmnist_directional() -> Outcome {
    let dir = env_dir("FEDLAP_FMNIST_DIR")?;
    let run = |alg| -> Result<f64, String> {
        let mut cfg = mlp_cfg(idx_dataset(&dir, 0.1), alg, 5, 0.01);
        cfg.split.kind = SplitKind::Dirichlet;
        cfg.split.alpha1 = 1.0;
        cfg.split.alpha2 = 0.5;
        cfg.split.clients = 10;
        cfg.strategy.tau = 0.01;
        cfg.strategy.memory_per_class = 1;
        let out = ok(run_experiment(&cfg))?;
        ensure!(out.failures.is_empty(), "{alg}: {:?}", out.failures);
        Ok(seed_means(&out, &[10])[0])
    };
    let (func, avg) = (run(Algorithm::FedLapFunc)?, run(Algorithm::FedAvg)?);
    let summary = format!("round 10: fedlap_func {:.1}% vs fedavg {:.1}%", 100.0 * func, 100.0 * avg);
    ensure!(func >= avg, "{summary}");
    Ok(summary)
}

// ---------------------------------------------------------------- entry points

#[test]
fn acceptance() {
    let results = [
        criterion("C1", "quadratic oracle convergence", Duration::from_secs(5), quadratic_convergence),
        criterion("C2", "fixed-point invariance", Duration::from_secs(10), fixed_points),
        criterion("C3", "reductions", Duration::from_secs(30), reductions),
        criterion("C4", "two-client credit", Duration::from_secs(600), two_client_credit),
        criterion("C5", "heterogeneous credit sweep", Duration::from_secs(3600), heterogeneous_credit),
        criterion("C7", "accounting and protocol", Duration::from_secs(60), accounting_and_protocol),
        criterion("C8", "gradients and curvature", Duration::from_secs(60), gradients_and_curvature),
        criterion("C9", "splitters", Duration::from_secs(60), splitters),
    ];
    report("SKIP C6 MNIST/FMNIST: slow, run `cargo test --release --test acceptance -- --ignored`");
    assert!(results.iter().all(|&r| r), "acceptance criteria failed");
}

#[test]
#[ignore = "slow; needs FEDLAP_MNIST_DIR"]
fn acceptance_mnist() {
    let pass = criterion("C6a", "MNIST homogeneous", Duration::from_secs(4 * 3600), mnist_homogeneous);
    assert!(pass);
}

#[test]
#[ignore = "slow; needs FEDLAP_FMNIST_DIR"]
fn acceptance_fmnist() {
    let pass = criterion("C6b", "10% FMNIST heterogeneous", Duration::from_secs(4 * 3600), fmnist_directional);
    assert!(pass);
}
