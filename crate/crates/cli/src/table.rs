//! Comparison tables from results files.
//!
//! Rows are dataset x split x algorithm. Files whose configs differ only in
//! seeds form one hyperparameter point; each cell reports the best point's
//! mean(std) over seeds, chosen per column.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use fedlap_core::harness::{read_results, rounds_to_accuracy, ExperimentConfig, RoundRecord};
use fedlap_core::strategy::Algorithm;

use crate::sweep::mean_std;
use crate::{CliResult, Failure, TableMode};

const MISSING: &str = "--";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct RowKey {
    dataset: String,
    split: String,
    clients: usize,
    algorithm: Algorithm,
}

/// Seed -> that seed's records, for one hyperparameter point.
type Point = BTreeMap<u64, Vec<RoundRecord>>;

fn expand(inputs: &[String]) -> CliResult<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for pattern in inputs {
        if Path::new(pattern).is_file() {
            paths.push(PathBuf::from(pattern));
            continue;
        }
        let matches = glob::glob(pattern)
            .with_context(|| format!("bad pattern {pattern:?}"))
            .map_err(Failure::Usage)?;
        let before = paths.len();
        for m in matches {
            let p = m.map_err(|e| Failure::Runtime(e.into()))?;
            if p.is_file() {
                paths.push(p);
            }
        }
        if paths.len() == before {
            return Err(Failure::Usage(anyhow!("no results files match {pattern:?}")));
        }
    }
    paths.sort();
    paths.dedup();
    Ok(paths)
}

fn row_key(cfg: &ExperimentConfig) -> RowKey {
    let split = serde_json::to_value(cfg.split.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    RowKey {
        dataset: cfg.dataset.label(),
        split,
        clients: cfg.split.clients,
        algorithm: cfg.strategy.algorithm,
    }
}

/// The config with everything that does not define a hyperparameter point cleared.
fn point_key(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.name.clear();
    c.seeds.clear();
    c.output = None;
    c.metric_cadence = 1;
    c.record_timing = false;
    c.record_params = false;
    c.transport = Default::default();
    serde_json::to_string(&c).expect("config serializes")
}

type Grouped = BTreeMap<RowKey, BTreeMap<String, Point>>;

fn group(paths: &[PathBuf]) -> CliResult<Grouped> {
    let mut rows: Grouped = BTreeMap::new();
    for path in paths {
        let file = read_results(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::Usage)?;
        let point = rows
            .entry(row_key(&file.config))
            .or_default()
            .entry(point_key(&file.config))
            .or_default();
        let mut by_seed: BTreeMap<u64, Vec<RoundRecord>> = BTreeMap::new();
        for r in file.records {
            by_seed.entry(r.seed).or_default().push(r);
        }
        for (seed, records) in by_seed {
            if point.contains_key(&seed) {
                log::warn!("{}: seed {seed} already seen for this point; ignored", path.display());
                continue;
            }
            point.insert(seed, records);
        }
    }
    Ok(rows)
}

/// Per-seed values for one point, or `None` if any seed lacks one.
fn point_values(point: &Point, value: impl Fn(&[RoundRecord]) -> Option<f64>) -> Option<Vec<f64>> {
    point.values().map(|records| value(records)).collect()
}

fn at_round(records: &[RoundRecord], round: u32, max: bool) -> Option<f64> {
    let r = records.iter().find(|r| r.round == round)?;
    if max {
        r.acc_max_last3
    } else {
        r.acc_avg_last3
    }
}

/// The best point's (mean, std); `higher` picks the largest mean.
fn best(points: &BTreeMap<String, Point>, higher: bool, value: impl Fn(&[RoundRecord]) -> Option<f64>) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for point in points.values() {
        let Some(vals) = point_values(point, &value) else { continue };
        if vals.is_empty() {
            continue;
        }
        let (m, s) = mean_std(&vals);
        let better = match best {
            None => true,
            Some((b, _)) => (higher && m > b) || (!higher && m < b),
        };
        if better {
            best = Some((m, s));
        }
    }
    best
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn build_table(paths: &[PathBuf], rounds: &[u32], mode: TableMode, thresholds: &[f64]) -> CliResult<Table> {
    let grouped = group(paths)?;
    let mut header: Vec<String> = ["dataset", "split", "K", "algorithm"].map(String::from).to_vec();
    match mode {
        TableMode::Rounds => header.extend(thresholds.iter().map(|t| format!("{}%", trim_pct(t * 100.0)))),
        _ => header.extend(rounds.iter().map(|r| format!("r{r}"))),
    }
    let mut rows = Vec::new();
    for (key, points) in &grouped {
        let mut row = vec![
            key.dataset.clone(),
            key.split.clone(),
            key.clients.to_string(),
            key.algorithm.to_string(),
        ];
        match mode {
            TableMode::Avg | TableMode::Max => {
                for &r in rounds {
                    let cell = best(points, true, |recs| at_round(recs, r, mode == TableMode::Max));
                    row.push(cell.map_or(MISSING.into(), |(m, s)| format!("{:.1}({:.1})", 100.0 * m, 100.0 * s)));
                }
            }
            TableMode::Rounds => {
                for &t in thresholds {
                    let cell = best(points, false, |recs| rounds_to_accuracy(recs, t).map(f64::from));
                    row.push(cell.map_or(MISSING.into(), |(m, s)| format!("{m:.0}({s:.0})")));
                }
            }
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn trim_pct(p: f64) -> String {
    let s = format!("{p:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

impl Table {
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            padded.join("  ").trim_end().to_owned() + "\n"
        };
        let mut out = line(&self.header);
        for row in &self.rows {
            out.push_str(&line(row));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",") + "\n";
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn cmd_table(
    inputs: &[String],
    rounds: &[u32],
    mode: TableMode,
    thresholds: &[f64],
    csv: Option<&Path>,
) -> CliResult<()> {
    if mode == TableMode::Rounds && thresholds.is_empty() {
        return Err(Failure::Usage(anyhow!("--mode rounds needs --thresholds")));
    }
    if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Failure::Usage(anyhow!("thresholds are accuracy fractions in [0, 1]")));
    }
    let paths = expand(inputs)?;
    let table = build_table(&paths, rounds, mode, thresholds)?;
    print!("{}", table.to_text());
    if let Some(path) = csv {
        std::fs::write(path, table.to_csv())
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::Runtime)?;
    }
    Ok(())
}
