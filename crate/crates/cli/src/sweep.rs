//! Hyperparameter sweeps: the cross product of config-key axes, run per seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use fedlap_core::harness::{run_experiment, write_results, ExperimentConfig};
use serde::Deserialize;
use serde_json::Value;

use crate::{classify, load_config, CliResult, Failure};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Base experiment config, relative to the sweep file.
    pub base: PathBuf,
    /// Config key -> values; keys are sorted, the last key varies fastest.
    pub axes: BTreeMap<String, Vec<Value>>,
    /// Overrides the base config's seeds.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Rounds summarized in `summary.csv`.
    #[serde(default = "default_rounds")]
    pub report_rounds: Vec<u32>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_rounds() -> Vec<u32> {
    vec![10, 25, 50]
}

/// Every combination of axis values, as `key=value` override lists.
pub fn grid(axes: &BTreeMap<String, Vec<Value>>) -> Vec<Vec<(String, Value)>> {
    let mut points = vec![Vec::new()];
    for (key, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut next = p.clone();
                    next.push((key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    points
}

/// Mean and population standard deviation (Welford, so identical values give
/// exactly that value and zero).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    (mean, (m2 / xs.len() as f64).sqrt())
}

fn load_spec(path: &Path) -> CliResult<SweepSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading sweep file {}", path.display()))
        .map_err(Failure::Usage)?;
    let mut spec: SweepSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing sweep file {}", path.display()))
        .map_err(Failure::Usage)?;
    let dir = path.parent().unwrap_or(Path::new(""));
    if spec.base.is_relative() {
        spec.base = dir.join(&spec.base);
    }
    if let Some(out) = spec.out_dir.as_mut().filter(|o| o.is_relative()) {
        *out = dir.join(&*out);
    }
    if spec.axes.values().any(Vec::is_empty) {
        return Err(Failure::Usage(anyhow!("sweep axes must not be empty")));
    }
    Ok(spec)
}

pub fn cmd_sweep(path: &Path, out_dir: Option<PathBuf>, dry_run: bool) -> CliResult<()> {
    let spec = load_spec(path)?;
    let base = load_config(&spec.base, &[])?;
    let seeds = spec.seeds.clone().unwrap_or_else(|| base.seeds.clone());
    let points = grid(&spec.axes);
    // Resolve every point up front so unknown keys fail before any training.
    let configs: Vec<ExperimentConfig> = points
        .iter()
        .map(|p| {
            let overrides: Vec<String> = p.iter().map(|(k, v)| format!("{k}={v}")).collect();
            base.with_overrides(&overrides)
                .map_err(|e| Failure::Usage(anyhow!("grid point {overrides:?}: {e}")))
        })
        .collect::<CliResult<_>>()?;
    eprintln!(
        "sweep: {} grid points x {} seeds = {} runs",
        points.len(),
        seeds.len(),
        points.len() * seeds.len()
    );
    if dry_run {
        return Ok(());
    }
    let out_dir = out_dir
        .or(spec.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(&base.name));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .map_err(Failure::Runtime)?;

    let mut summary = String::from("point");
    for key in spec.axes.keys() {
        write!(summary, ",{key}").unwrap();
    }
    for r in &spec.report_rounds {
        write!(summary, ",acc_r{r}_mean,acc_r{r}_std").unwrap();
    }
    summary.push('\n');

    let mut failed = 0;
    for (i, (point, cfg)) in points.iter().zip(&configs).enumerate() {
        // acc_avg_last3 per report round, one entry per seed.
        let mut per_round: Vec<Vec<f64>> = vec![Vec::new(); spec.report_rounds.len()];
        for &seed in &seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.seeds = vec![seed];
            run_cfg.name = format!("{}_p{i:03}", base.name);
            log::info!("point {i} seed {seed}: {point:?}");
            let out = run_experiment(&run_cfg).map_err(classify)?;
            let file = out_dir.join(format!("p{i:03}_seed{seed}.jsonl"));
            write_results(&file, &run_cfg, &out).map_err(classify)?;
            failed += out.failures.len();
            for (acc, r) in per_round.iter_mut().zip(&spec.report_rounds) {
                if let Some(a) = out.records.iter().find(|x| x.round == *r).and_then(|x| x.acc_avg_last3) {
                    acc.push(a);
                }
            }
        }
        write!(summary, "{i}").unwrap();
        for (_, v) in point {
            write!(summary, ",{}", csv_value(v)).unwrap();
        }
        for accs in &per_round {
            if accs.len() == seeds.len() {
                let (m, s) = mean_std(accs);
                write!(summary, ",{m},{s}").unwrap();
            } else {
                summary.push_str(",,");
            }
        }
        summary.push('\n');
    }
    let summary_path = out_dir.join("summary.csv");
    std::fs::write(&summary_path, summary)
        .with_context(|| format!("writing {}", summary_path.display()))
        .map_err(Failure::Runtime)?;
    println!("{}", summary_path.display());
    if failed > 0 {
        return Err(Failure::Runtime(anyhow!("{failed} run(s) failed; see the results files")));
    }
    Ok(())
}

/// Plain scalars as-is; anything else as quoted JSON.
fn csv_value(v: &Value) -> String {
    match v {
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::String(s) if !s.contains([',', '"', '\n']) => s.clone(),
        other => format!("\"{}\"", other.to_string().replace('"', "\"\"")),
    }
}
