use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{BlobSpec, CsvSchema, QuadraticSpec, SplitKind, SplitSpec};
use crate::error::{Error, Result};
use crate::local::LocalSolver;
use crate::model::{ModelKind, ModelSpec};
use crate::strategy::{Algorithm, StrategyConfig};

fn default_test_fraction() -> f64 {
    0.2
}

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
    /// `crx.data` with the standard Credit Approval layout.
    UciCredit {
        path: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        split_seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Stratified fraction of the training set to keep; redrawn for every run seed.
        #[serde(default = "default_one")]
        train_fraction: f64,
        #[serde(default)]
        subsample_seed: u64,
    },
    Blobs {
        #[serde(default)]
        blobs: BlobSpec,
        #[serde(default)]
        seed: u64,
    },
    /// Synthetic per-client quadratics; the client count comes from `split.clients`.
    QuadraticClients {
        #[serde(default)]
        quadratic: QuadraticSpec,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::QuadraticClients {
            quadratic: QuadraticSpec::default(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn is_quadratic(&self) -> bool {
        matches!(self, DatasetSpec::QuadraticClients { .. })
    }

    /// Short name used in tables.
    pub fn label(&self) -> String {
        match self {
            DatasetSpec::Csv { path, .. } => file_stem(path),
            DatasetSpec::UciCredit { .. } => "uci_credit".into(),
            DatasetSpec::Idx { train_images, .. } => train_images
                .parent()
                .map(file_stem)
                .unwrap_or_else(|| "idx".into()),
            DatasetSpec::Blobs { .. } => "blobs".into(),
            DatasetSpec::QuadraticClients { .. } => "quadratic".into(),
        }
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            DatasetSpec::Csv { path, .. } | DatasetSpec::UciCredit { path, .. } => vec![path],
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => vec![train_images, train_labels, test_images, test_labels],
            _ => vec![],
        }
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into())
}

/// Model architecture; input width and class count come from the dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_sizes: Vec<usize>,
    pub bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::LogisticBinary,
            hidden_sizes: vec![200, 100],
            bias: true,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, input_dim: usize, class_count: usize) -> Result<ModelSpec> {
        let spec = match self.kind {
            ModelKind::LogisticBinary => {
                if class_count != 2 {
                    return Err(Error::config(format!(
                        "logistic_binary needs two classes, dataset has {class_count}"
                    )));
                }
                ModelSpec::logistic(input_dim, self.bias)
            }
            ModelKind::SoftmaxLinear => ModelSpec::softmax(input_dim, class_count, self.bias),
            ModelKind::Mlp => ModelSpec {
                bias: self.bias,
                ..ModelSpec::mlp(input_dim, self.hidden_sizes.clone(), class_count)
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transport {
    Inproc,
    Tcp { host: String, port: u16 },
}

impl Default for Transport {
    fn default() -> Self {
        Transport::Inproc
    }
}

/// A complete declarative experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub strategy: StrategyConfig,
    pub local: LocalSolver,
    pub rounds: u32,
    pub seeds: Vec<u64>,
    /// Full records are written every `metric_cadence` rounds and at the last round.
    pub metric_cadence: u32,
    pub output: Option<PathBuf>,
    pub transport: Transport,
    /// Record wall time; disable for byte-reproducible result files.
    pub record_timing: bool,
    /// Include `w_g` in every record.
    pub record_params: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            dataset: DatasetSpec::default(),
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            strategy: StrategyConfig::default(),
            local: LocalSolver::default(),
            rounds: 10,
            seeds: vec![0],
            metric_cadence: 1,
            output: None,
            transport: Transport::Inproc,
            record_timing: true,
            record_params: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a JSON config; relative data paths are resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in self.dataset.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.local.validate()?;
        self.split.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.metric_cadence == 0 {
            return Err(Error::config("metric_cadence must be at least 1"));
        }
        let alg = self.strategy.algorithm;
        if self.dataset.is_quadratic() {
            if alg == Algorithm::FedLapFunc {
                return Err(Error::config(
                    "fedlap_func needs a classification dataset for its memory points",
                ));
            }
            if !matches!(self.split.kind, SplitKind::Homogeneous) {
                return Err(Error::config("quadratic_clients generates its own shards; use a homogeneous split"));
            }
        }
        if alg == Algorithm::FedLapFunc && self.strategy.memory_per_class == 0 && self.strategy.tau > 0.0 {
            log::warn!("fedlap_func with memory_per_class = 0 reduces to fedlap");
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Applies `key=value` overrides with dotted keys (`strategy.delta=0.1`).
    /// Values are parsed as JSON, falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut v = self.to_value();
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
            set_path(&mut v, key, value)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sets a dotted path inside a JSON tree; every segment must already exist.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let prefix = parts[..depth].join(".");
        cur = match cur {
            Value::Object(map) => {
                if !map.contains_key(*part) {
                    let mut valid: Vec<String> = map
                        .keys()
                        .map(|k| if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") })
                        .collect();
                    valid.sort();
                    return Err(Error::config(format!(
                        "unknown key {key:?}; valid keys here: {}",
                        valid.join(", ")
                    )));
                }
                map.get_mut(*part).expect("checked")
            }
            Value::Array(items) => {
                let i: usize = part
                    .parse()
                    .map_err(|_| Error::config(format!("{prefix} is a list; {part:?} is not an index")))?;
                let len = items.len();
                items
                    .get_mut(i)
                    .ok_or_else(|| Error::config(format!("{prefix}[{i}] out of range (len {len})")))?
            }
            _ => {
                return Err(Error::config(format!(
                    "unknown key {key:?}: {prefix} is not an object"
                )))
            }
        };
    }
    *cur = value;
    Ok(())
}
