//! `fedlap`: run experiments, sweeps and the centralized oracle, serve or join
//! TCP sessions, and build comparison tables from results files.

mod sweep;
mod table;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use fedlap_core::harness::{
    oracle_sweep, run_experiment, tcp_client, tcp_serve, write_results, ExperimentConfig, RunOutput, Transport,
};

/// Exit code 2: bad arguments, missing files, invalid configs. Exit code 1:
/// the experiment itself failed.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Configuration problems are usage errors; everything else is a runtime failure.
pub fn classify(e: fedlap_core::Error) -> Failure {
    match e {
        fedlap_core::Error::Config(_) | fedlap_core::Error::Parse { .. } => Failure::Usage(e.into()),
        other => Failure::Runtime(other.into()),
    }
}

#[derive(Parser)]
#[command(name = "fedlap", version, about = "Federated Laplace-site optimisation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config (all seeds) and write a JSON-lines results file.
    Run {
        config: PathBuf,
        /// `key=value` overrides with dotted keys, e.g. `strategy.delta=0.1`.
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run the cross product of a sweep file: one results file per grid point and seed.
    Sweep {
        sweep: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Print the grid size and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Train centrally on the union of the first seed's shards.
    Oracle {
        config: PathBuf,
        overrides: Vec<String>,
        /// Prior precisions to solve for; defaults to the config's delta.
        #[arg(long = "delta")]
        deltas: Vec<f64>,
    },
    /// Build a comparison table from results files.
    Table {
        /// Results files or glob patterns.
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "10,25,50")]
        rounds: Vec<u32>,
        #[arg(long, value_enum, default_value_t = TableMode::Avg)]
        mode: TableMode,
        /// Accuracy thresholds (fractions) for `--mode rounds`.
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve an experiment to TCP clients.
    Serve {
        config: PathBuf,
        overrides: Vec<String>,
        #[arg(long)]
        addr: Option<SocketAddr>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Join a served experiment as one client.
    Client {
        config: PathBuf,
        overrides: Vec<String>,
        #[arg(long)]
        id: usize,
        #[arg(long)]
        addr: Option<SocketAddr>,
        /// Seconds to wait for the server between messages.
        #[arg(long, default_value_t = 600)]
        timeout: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TableMode {
    /// Mean of the trailing three accuracies.
    Avg,
    /// Max of the trailing three accuracies.
    Max,
    /// First round reaching each threshold.
    Rounds,
}

pub fn load_config(path: &Path, overrides: &[String]) -> CliResult<ExperimentConfig> {
    if !path.is_file() {
        return Err(Failure::Usage(anyhow!("config file {} not found", path.display())));
    }
    let cfg = ExperimentConfig::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(Failure::Usage)?;
    cfg.with_overrides(overrides)
        .with_context(|| format!("applying overrides to {}", path.display()))
        .map_err(Failure::Usage)
}

fn results_path(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(format!("{}.jsonl", cfg.name)))
}

/// Writes the results file; seed failures make the command fail after writing.
fn finish(cfg: &ExperimentConfig, out: &RunOutput, path: &Path) -> CliResult<()> {
    write_results(path, cfg, out).map_err(classify)?;
    println!("{}", path.display());
    if out.failures.is_empty() {
        Ok(())
    } else {
        for f in &out.failures {
            log::error!("seed {} failed at round {}: {}", f.seed, f.round, f.error);
        }
        Err(Failure::Runtime(anyhow!("{} seed(s) failed", out.failures.len())))
    }
}

fn tcp_addr(cfg: &ExperimentConfig, addr: Option<SocketAddr>) -> CliResult<String> {
    match (addr, &cfg.transport) {
        (Some(a), _) => Ok(a.to_string()),
        (None, Transport::Tcp { host, port }) => Ok(format!("{host}:{port}")),
        (None, Transport::Inproc) => Err(Failure::Usage(anyhow!(
            "no address: pass --addr or set transport to tcp in the config"
        ))),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run {
            config,
            mut overrides,
            out,
            rounds,
            seeds,
        } => {
            if let Some(r) = rounds {
                overrides.push(format!("rounds={r}"));
            }
            if let Some(s) = seeds {
                overrides.push(format!("seeds={s:?}"));
            }
            let cfg = load_config(&config, &overrides)?;
            let result = run_experiment(&cfg).map_err(classify)?;
            finish(&cfg, &result, &results_path(&cfg, out))
        }
        Command::Sweep { sweep, out_dir, dry_run } => sweep::cmd_sweep(&sweep, out_dir, dry_run),
        Command::Oracle {
            config,
            overrides,
            deltas,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let deltas = if deltas.is_empty() { vec![cfg.strategy.delta] } else { deltas };
            for r in oracle_sweep(&cfg, &deltas).map_err(classify)? {
                println!("{}", serde_json::to_string(&r).map_err(|e| Failure::Runtime(e.into()))?);
            }
            Ok(())
        }
        Command::Table {
            inputs,
            rounds,
            mode,
            thresholds,
            csv,
        } => table::cmd_table(&inputs, &rounds, mode, &thresholds, csv.as_deref()),
        Command::Serve {
            config,
            overrides,
            addr,
            out,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let addr = tcp_addr(&cfg, addr)?;
            let result = tcp_serve(&cfg, addr.as_str()).map_err(classify)?;
            finish(&cfg, &result, &results_path(&cfg, out))
        }
        Command::Client {
            config,
            overrides,
            id,
            addr,
            timeout,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let addr = tcp_addr(&cfg, addr)?;
            tcp_client(&cfg, addr.as_str(), id, Duration::from_secs(timeout)).map_err(classify)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
