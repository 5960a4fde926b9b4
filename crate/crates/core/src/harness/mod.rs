//! Round orchestration, transports, accounting, the centralized oracle and
//! results persistence.

pub mod config;
pub mod metrics;
pub mod oracle;
pub mod results;
pub mod runner;
pub mod tcp;
pub mod wire;

pub use config::{DatasetSpec, ExperimentConfig, ModelConfig, Transport};
pub use metrics::{comm_cost, rounds_to_accuracy, CommCost, RoundRecord};
pub use oracle::{centralized_oracle, oracle_for_problem, oracle_sweep, OracleResult};
pub use results::{read_results, write_results, ResultsFile};
pub use runner::{
    build_problem, evaluate, load_dataset, run_experiment, run_experiment_with_workers, run_seed,
    run_with_transport, stream_seed, FailureRecord, InProcess, Problem, RoundTransport, RunOutput,
};
pub use tcp::{tcp_client, tcp_serve, tcp_serve_on};
pub use wire::{decode_msg, encode_msg, WireError, WireMsg};
