//! JSON-lines results: one header line with the resolved config, then one
//! line per round record or failure.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::RoundRecord;
use super::runner::{FailureRecord, RunOutput};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResultLine {
    Header { config: ExperimentConfig },
    Round(RoundRecord),
    Failure(FailureRecord),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultsFile {
    pub config: ExperimentConfig,
    pub records: Vec<RoundRecord>,
    pub failures: Vec<FailureRecord>,
}

pub fn results_to_string(cfg: &ExperimentConfig, out: &RunOutput) -> Result<String> {
    let mut s = serde_json::to_string(&ResultLine::Header { config: cfg.clone() })?;
    s.push('\n');
    for r in &out.records {
        s.push_str(&serde_json::to_string(&ResultLine::Round(r.clone()))?);
        s.push('\n');
    }
    for f in &out.failures {
        s.push_str(&serde_json::to_string(&ResultLine::Failure(f.clone()))?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_results(path: impl AsRef<Path>, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, results_to_string(cfg, out)?)?;
    Ok(())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<ResultsFile> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut config = None;
    let (mut records, mut failures) = (Vec::new(), Vec::new());
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ResultLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            ResultLine::Header { config: c } => config = Some(c),
            ResultLine::Round(r) => records.push(r),
            ResultLine::Failure(f) => failures.push(f),
        }
    }
    Ok(ResultsFile {
        config: config.ok_or_else(|| Error::Format {
            path: path.into(),
            message: "missing header line".into(),
        })?,
        records,
        failures,
    })
}
