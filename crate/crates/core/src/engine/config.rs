use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datakit::{
    intrusion_like_csv, intrusion_like_schema, load_csv, read_csv, synth_classification, ColumnSpec, CsvSchema, PartitionMode, PartitionSpec,
    SensitiveAttributeSpec, SynthSpec,
};
use crate::error::{Error, Result};
use crate::fairness::{EqOddsMode, FairnessWeights};
use crate::numkit::{LabeledBatch, ModelKind, RngStream, SgdConfig};
use crate::shapley::{ShapleyWeighting, DEFAULT_MAX_PARTICIPANTS};
use crate::strategies::StrategyConfig;

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic(SynthSpec),
    Csv {
        /// Resolved against the config file's directory when relative.
        path: PathBuf,
        columns: Vec<ColumnSpec>,
    },
    /// Generated NSL-KDD-shaped table, ingested through the CSV path.
    IntrusionLike { rows: usize },
}

fn default_alpha() -> f64 {
    0.5
}
fn default_train_fraction() -> f64 {
    0.9
}
fn default_auxiliary_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub mode: PartitionMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_auxiliary_fraction")]
    pub auxiliary_fraction: f64,
}

fn default_model() -> ModelKind {
    ModelKind::Logistic
}
fn default_batch_size() -> usize {
    SgdConfig::DEFAULT_BATCH_SIZE
}
fn default_threshold() -> f64 {
    0.8
}
fn default_positive_class() -> usize {
    1
}
fn default_shapley_cap() -> usize {
    DEFAULT_MAX_PARTICIPANTS
}

/// A complete, reproducible experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub strategy: StrategyConfig,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    #[serde(default)]
    pub attributes: Vec<SensitiveAttributeSpec>,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    pub total_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub local_lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub fairness_weights: FairnessWeights,
    #[serde(default)]
    pub shapley_weighting: ShapleyWeighting,
    #[serde(default = "default_shapley_cap")]
    pub shapley_max_clients: usize,
    #[serde(default)]
    pub eqodds_mode: EqOddsMode,
    /// Inclusive `[start, end]` round range averaged in summaries.
    pub summary_window: (usize, usize),
    #[serde(default = "default_threshold")]
    pub fairness_threshold: f64,
    /// Class treated as `Y = 1` for equalised odds.
    #[serde(default = "default_positive_class")]
    pub positive_class: usize,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses TOML or JSON (by extension, `.json` → JSON) and remembers the
    /// file's directory for relative dataset paths.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    /// Participation rate `|S_k| / C`.
    pub fn sample_rate(&self) -> f64 {
        self.clients_per_round as f64 / self.total_clients as f64
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            mode: self.partition.mode,
            alpha: self.partition.alpha,
            clients: self.total_clients,
            train_fraction: self.partition.train_fraction,
            auxiliary_fraction: self.partition.auxiliary_fraction,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            epochs: self.local_epochs,
            lr: self.local_lr,
            batch_size: self.batch_size,
        }
    }

    pub fn csv_path(&self) -> Option<PathBuf> {
        match &self.dataset {
            DatasetConfig::Csv { path, .. } => Some(match &self.base_dir {
                Some(base) if path.is_relative() => base.join(path),
                _ => path.clone(),
            }),
            _ => None,
        }
    }

    fn task_shape(&self) -> (usize, usize, Option<Vec<String>>) {
        match &self.dataset {
            DatasetConfig::Synthetic(s) => (s.n_features, s.n_classes, None),
            DatasetConfig::IntrusionLike { .. } => {
                let schema = intrusion_like_schema();
                (schema.n_features(), schema.n_classes(), Some(schema.column_names()))
            }
            DatasetConfig::Csv { columns, .. } => {
                let schema = CsvSchema {
                    columns: columns.clone(),
                };
                (schema.n_features(), schema.n_classes(), Some(schema.column_names()))
            }
        }
    }

    /// Every violated constraint, as human-readable lines. Empty means valid.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |r: Result<()>| {
            if let Err(e) = r {
                out.push(e.to_string().trim_start_matches("configuration error: ").to_string());
            }
        };
        if self.clients_per_round > self.total_clients {
            check(Err(Error::config(format!(
                "clients_per_round ({}) must not exceed total_clients ({})",
                self.clients_per_round, self.total_clients
            ))));
        }
        if self.clients_per_round == 0 {
            check(Err(Error::config("clients_per_round must be at least 1")));
        }
        if self.clients_per_round > self.shapley_max_clients {
            check(Err(Error::config(format!(
                "clients_per_round ({}) exceeds the exact Shapley cap shapley_max_clients ({})",
                self.clients_per_round, self.shapley_max_clients
            ))));
        }
        if self.rounds == 0 {
            check(Err(Error::config("rounds must be at least 1")));
        }
        let (start, end) = self.summary_window;
        if start < 1 || start > end || end > self.rounds {
            check(Err(Error::config(format!(
                "summary_window ({start}, {end}) must satisfy 1 <= start <= end <= rounds ({})",
                self.rounds
            ))));
        }
        if self.local_epochs == 0 {
            check(Err(Error::config("local_epochs must be at least 1")));
        }
        if !(self.local_lr.is_finite() && self.local_lr > 0.0) {
            check(Err(Error::config(format!("local_lr must be > 0, got {}", self.local_lr))));
        }
        if self.batch_size == 0 {
            check(Err(Error::config("batch_size must be at least 1")));
        }
        if self.seeds.is_empty() {
            check(Err(Error::config("at least one seed is required")));
        }
        if !(0.0..=1.0).contains(&self.fairness_threshold) {
            check(Err(Error::config(format!(
                "fairness_threshold must lie in [0, 1], got {}",
                self.fairness_threshold
            ))));
        }
        check(self.fairness_weights.validate());
        check(self.strategy.validate());
        check(self.partition_spec().validate());
        match &self.dataset {
            DatasetConfig::Synthetic(s) => check(s.validate()),
            DatasetConfig::IntrusionLike { rows } => {
                if *rows == 0 {
                    check(Err(Error::config("intrusion_like needs at least one row")));
                }
            }
            DatasetConfig::Csv { columns, .. } => {
                check(
                    CsvSchema {
                        columns: columns.clone(),
                    }
                    .validate(),
                );
                if let Some(p) = self.csv_path() {
                    if !p.is_file() {
                        check(Err(Error::config(format!("dataset file {} does not exist", p.display()))));
                    }
                }
            }
        }
        let (n_features, n_classes, columns) = self.task_shape();
        if self.positive_class >= n_classes {
            check(Err(Error::config(format!(
                "positive_class {} is not one of the {n_classes} classes",
                self.positive_class
            ))));
        }
        for a in &self.attributes {
            check(
                a.predicate
                    .check(n_features, n_classes, columns.as_deref())
                    .map_err(|e| Error::config(format!("attribute '{}': {e}", a.name))),
            );
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.diagnostics();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }

    /// Builds the full sample pool for one seed. Returns the number of CSV
    /// rows rejected during ingestion alongside the data.
    pub fn load_dataset(&self, seed: u64) -> Result<(LabeledBatch, usize)> {
        match &self.dataset {
            DatasetConfig::Synthetic(spec) => {
                let mut rng = RngStream::derive(seed, &[super::stream::DATA]);
                Ok((synth_classification(spec, &self.attributes, &mut rng)?, 0))
            }
            DatasetConfig::Csv { columns, .. } => {
                let path = self.csv_path().expect("csv dataset has a path");
                let schema = CsvSchema {
                    columns: columns.clone(),
                };
                let load = load_csv(path, &schema, &self.attributes)?;
                Ok((load.batch, load.rejects.len()))
            }
            DatasetConfig::IntrusionLike { rows } => {
                let mut rng = RngStream::derive(seed, &[super::stream::DATA]);
                let text = intrusion_like_csv(*rows, &mut rng);
                let load = read_csv(text.as_bytes(), &intrusion_like_schema(), &self.attributes)?;
                Ok((load.batch, load.rejects.len()))
            }
        }
    }
}
