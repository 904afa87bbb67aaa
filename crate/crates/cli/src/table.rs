//! Source-independent view of result files, shared by `summarize` and
//! `export`. A run read back from exported CSV compares equal to the same run
//! read from its JSON file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fedfair::engine::{AggregateReport, RunResult, SCHEMA_VERSION};
use fedfair::fairness::Notion;

use crate::exit::{CliResult, Code, Failure};

pub const ROUND_METRICS: [&str; 6] = ["f_j", "f_g", "f_r", "f_o", "F_T", "aux_accuracy"];
pub const ROUNDS_CSV: &str = "rounds.csv";
pub const CLIENTS_CSV: &str = "clients.csv";
pub const RUNS_CSV: &str = "runs.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub value: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTable {
    /// `{experiment name}/seed{seed}`.
    pub run: String,
    pub seed: u64,
    pub window: (usize, usize),
    pub threshold: f64,
    /// Round number to metric cells, keyed as in [`ROUND_METRICS`].
    pub rounds: BTreeMap<usize, BTreeMap<String, Cell>>,
}

pub fn run_id(result: &RunResult) -> String {
    let name = if result.config.name.is_empty() {
        "run"
    } else {
        result.config.name.as_str()
    };
    format!("{name}/seed{}", result.meta.seed)
}

impl RunTable {
    pub fn from_result(result: &RunResult) -> Self {
        let rounds = result
            .rounds
            .iter()
            .map(|r| {
                let mut cells: BTreeMap<String, Cell> = Notion::ALL
                    .into_iter()
                    .map(|n| {
                        let cell = Cell {
                            value: r.fairness.get(n),
                            reason: r.fairness.reason(n).map(str::to_string),
                        };
                        (n.key().to_string(), cell)
                    })
                    .collect();
                cells.insert(
                    "aux_accuracy".into(),
                    Cell {
                        value: Some(r.aux_accuracy),
                        reason: None,
                    },
                );
                (r.k, cells)
            })
            .collect();
        RunTable {
            run: run_id(result),
            seed: result.meta.seed,
            window: result.config.summary_window,
            threshold: result.config.fairness_threshold,
            rounds,
        }
    }

    /// Window mean of `metric` over rounds where it is defined, summed in
    /// round order, with the number of contributing rounds.
    pub fn window_mean(&self, metric: &str) -> (Option<f64>, usize) {
        let values: Vec<f64> = self
            .rounds
            .range(self.window.0..=self.window.1)
            .filter_map(|(_, cells)| cells.get(metric).and_then(|c| c.value))
            .collect();
        if values.is_empty() {
            (None, 0)
        } else {
            (Some(values.iter().sum::<f64>() / values.len() as f64), values.len())
        }
    }
}

/// A loaded input file.
pub enum Loaded {
    Runs(Vec<RunTable>, Vec<RunResult>),
    Skipped(String),
}

/// Expands shell-style patterns into a sorted, de-duplicated file list.
pub fn expand(patterns: &[String]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in patterns {
        let matches = glob::glob(p).map_err(|e| Failure::new(Code::Parse, format!("bad pattern '{p}': {e}")))?;
        for m in matches {
            let path = m.map_err(|e| Failure::new(Code::Parse, e.to_string()))?;
            if path.is_file() {
                files.push(path);
            }
        }
    }
    files.sort();
    files.dedup();
    if files.is_empty() {
        return Err(Failure::new(
            Code::Parse,
            format!("no result files match {}", patterns.join(" ")),
        ));
    }
    Ok(files)
}

pub fn load(path: &Path) -> CliResult<Loaded> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        return match path.file_name().and_then(|n| n.to_str()) {
            Some(ROUNDS_CSV) => Ok(Loaded::Runs(load_rounds_csv(path)?, Vec::new())),
            _ => Ok(Loaded::Skipped(format!(
                "{}: only {ROUNDS_CSV} carries per-round metrics",
                path.display()
            ))),
        };
    }
    let context = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Failure::new(Code::Parse, format!("{context}: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::new(Code::Parse, format!("{context}: {e}")))?;
    if value.get("rounds").is_some() {
        let result = RunResult::from_json(&text).map_err(|e| Failure::reading(&context, e))?;
        Ok(Loaded::Runs(vec![RunTable::from_result(&result)], vec![result]))
    } else if value.get("per_round").is_some() {
        AggregateReport::from_json(&text).map_err(|e| Failure::reading(&context, e))?;
        Ok(Loaded::Skipped(format!("{context}: aggregate file, not a run")))
    } else {
        Err(Failure::new(
            Code::Schema,
            format!("{context}: not a {SCHEMA_VERSION} results file"),
        ))
    }
}

fn csv_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(Code::Parse, format!("{}: {e}", path.display()))
}

fn field<'a>(path: &Path, header: &csv::StringRecord, row: &'a csv::StringRecord, name: &str) -> CliResult<&'a str> {
    header
        .iter()
        .position(|h| h == name)
        .and_then(|i| row.get(i))
        .ok_or_else(|| csv_failure(path, format!("missing column '{name}'")))
}

fn parse<T: std::str::FromStr>(path: &Path, what: &str, text: &str) -> CliResult<T> {
    text.parse()
        .map_err(|_| csv_failure(path, format!("bad {what} '{text}'")))
}

/// Reads `rounds.csv` together with the `runs.csv` sidecar next to it.
fn load_rounds_csv(path: &Path) -> CliResult<Vec<RunTable>> {
    let sidecar = path.with_file_name(RUNS_CSV);
    let mut tables: BTreeMap<String, RunTable> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(&sidecar).map_err(|e| csv_failure(&sidecar, e))?;
    let header = rdr.headers().map_err(|e| csv_failure(&sidecar, e))?.clone();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_failure(&sidecar, e))?;
        let schema = field(&sidecar, &header, &row, "schema_version")?;
        if schema != SCHEMA_VERSION {
            return Err(Failure::new(
                Code::Schema,
                format!(
                    "{}: schema version mismatch: expected {SCHEMA_VERSION}, found {schema}",
                    sidecar.display()
                ),
            ));
        }
        let run = field(&sidecar, &header, &row, "run")?.to_string();
        let table = RunTable {
            run: run.clone(),
            seed: parse(&sidecar, "seed", field(&sidecar, &header, &row, "seed")?)?,
            window: (
                parse(&sidecar, "window_start", field(&sidecar, &header, &row, "window_start")?)?,
                parse(&sidecar, "window_end", field(&sidecar, &header, &row, "window_end")?)?,
            ),
            threshold: parse(&sidecar, "threshold", field(&sidecar, &header, &row, "threshold")?)?,
            rounds: BTreeMap::new(),
        };
        tables.insert(run, table);
    }

    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_failure(path, e))?;
    let header = rdr.headers().map_err(|e| csv_failure(path, e))?.clone();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_failure(path, e))?;
        let run = field(path, &header, &row, "run")?;
        let table = tables
            .get_mut(run)
            .ok_or_else(|| csv_failure(path, format!("run '{run}' is not listed in {RUNS_CSV}")))?;
        let k: usize = parse(path, "round", field(path, &header, &row, "round")?)?;
        let value = match field(path, &header, &row, "value")? {
            "" => None,
            v => Some(parse(path, "value", v)?),
        };
        let reason = match field(path, &header, &row, "reason")? {
            "" => None,
            r => Some(r.to_string()),
        };
        table
            .rounds
            .entry(k)
            .or_default()
            .insert(field(path, &header, &row, "metric")?.to_string(), Cell { value, reason });
    }
    Ok(tables.into_values().collect())
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt_value(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `rounds.csv`, `clients.csv` and `runs.csv` into `out`.
pub fn export_csv(results: &[RunResult], out: &Path) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Failure::output(&out.display().to_string(), e))?;
    let paths = [out.join(ROUNDS_CSV), out.join(CLIENTS_CSV), out.join(RUNS_CSV)];
    let written = write_tables(results, &paths);
    if written.is_err() {
        for p in &paths {
            let _ = fs::remove_file(p);
        }
    }
    written.map(|_| paths.to_vec())
}

fn out_err(p: &Path) -> impl Fn(csv::Error) -> Failure + '_ {
    move |e| Failure::output(&p.display().to_string(), e)
}

fn write_tables(results: &[RunResult], paths: &[PathBuf; 3]) -> CliResult {
    let open = |p: &PathBuf| csv::Writer::from_path(p).map_err(|e| Failure::output(&p.display().to_string(), e));
    let (mut rounds, mut clients, mut runs) = (open(&paths[0])?, open(&paths[1])?, open(&paths[2])?);

    rounds
        .write_record(["run", "round", "metric", "value", "reason"])
        .map_err(out_err(&paths[0]))?;
    clients
        .write_record([
            "run",
            "round",
            "client",
            "x",
            "r",
            "s",
            "s_cumulative",
            "eqodds_mean",
            "eqodds_mean_before_training",
        ])
        .map_err(out_err(&paths[1]))?;
    runs.write_record([
        "run",
        "seed",
        "schema_version",
        "strategy",
        "window_start",
        "window_end",
        "threshold",
        "rounds",
        "sample_rate",
    ])
    .map_err(out_err(&paths[2]))?;

    for result in results {
        let table = RunTable::from_result(result);
        for (k, cells) in &table.rounds {
            for metric in ROUND_METRICS {
                let cell = &cells[metric];
                rounds
                    .write_record([
                        table.run.as_str(),
                        &k.to_string(),
                        metric,
                        &fmt_value(cell.value),
                        cell.reason.as_deref().unwrap_or(""),
                    ])
                    .map_err(out_err(&paths[0]))?;
            }
        }
        let mut cumulative: BTreeMap<usize, f64> = BTreeMap::new();
        for r in &result.rounds {
            for (&n, &s) in &r.shapley.per_round {
                *cumulative.entry(n).or_insert(0.0) += s;
            }
            for c in &r.clients {
                let s = r.shapley.per_round.get(&c.client_id).copied();
                clients
                    .write_record([
                        table.run.clone(),
                        r.k.to_string(),
                        c.client_id.to_string(),
                        c.performance.to_string(),
                        c.reward.to_string(),
                        fmt_value(s),
                        fmt_value(cumulative.get(&c.client_id).copied()),
                        fmt_value(c.eqodds.mean()),
                        fmt_value(c.eqodds_before_training.mean()),
                    ])
                    .map_err(out_err(&paths[1]))?;
            }
        }
        runs.write_record([
            table.run.clone(),
            result.meta.seed.to_string(),
            result.meta.schema_version.clone(),
            result.config.strategy.kind.name().to_string(),
            table.window.0.to_string(),
            table.window.1.to_string(),
            table.threshold.to_string(),
            result.rounds.len().to_string(),
            result.meta.sample_rate.to_string(),
        ])
        .map_err(out_err(&paths[2]))?;
    }
    for (w, p) in [(&mut rounds, &paths[0]), (&mut clients, &paths[1]), (&mut runs, &paths[2])] {
        w.flush().map_err(|e| Failure::output(&p.display().to_string(), e))?;
    }
    Ok(())
}
