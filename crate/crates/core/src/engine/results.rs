use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fairness::{EqOddsRecord, Exclusion, FairnessValues, Notion};
use crate::shapley::ShapleyLedger;

/// Version tag written into every results and aggregate file.
pub const SCHEMA_VERSION: &str = "fedfair-results/1";

/// One selected client's observations in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundRecord {
    pub client_id: usize,
    pub round: usize,
    /// Test accuracy after local training (the personalised model for Ditto).
    pub performance: f64,
    /// Test accuracy of the distributed global model, before local training.
    pub reward: f64,
    /// Equalised-odds scores of the post-training model; these feed `f_g`.
    pub eqodds: EqOddsRecord,
    /// Equalised-odds scores of the distributed global model.
    pub eqodds_before_training: EqOddsRecord,
    pub train_size: usize,
    pub test_size: usize,
    /// Train-set loss of the distributed global model.
    pub local_loss_before: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundShapleyRecord {
    /// `s_{n,k}` for the selected clients.
    pub per_round: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub k: usize,
    pub selected: Vec<usize>,
    pub fairness: FairnessValues,
    pub gains_g: BTreeMap<usize, f64>,
    pub gains_r: BTreeMap<usize, f64>,
    pub excluded_clients: Vec<Exclusion>,
    pub clamped_negative_gains: usize,
    pub clients: Vec<ClientRoundRecord>,
    pub shapley: RoundShapleyRecord,
    /// Accuracy of the aggregated model on the server's auxiliary set.
    pub aux_accuracy: f64,
    /// q-FedAvg fell back to FedAvg because every client loss was zero.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub aggregation_fallback: bool,
}

/// Window mean of one notion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotionSummary {
    pub mean: Option<f64>,
    /// Rounds of the window in which the notion was defined.
    pub defined_rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub window: (usize, usize),
    pub rounds_in_window: usize,
    pub notions: BTreeMap<Notion, NotionSummary>,
    pub aux_accuracy: Option<f64>,
}

impl Summary {
    /// Means over the inclusive `window`, skipping rounds where a notion is
    /// undefined. Sums run in round order.
    pub fn compute(rounds: &[RoundRecord], window: (usize, usize)) -> Summary {
        let in_window: Vec<&RoundRecord> = rounds
            .iter()
            .filter(|r| r.k >= window.0 && r.k <= window.1)
            .collect();
        let notions = Notion::ALL
            .into_iter()
            .map(|notion| {
                let values: Vec<f64> = in_window
                    .iter()
                    .filter_map(|r| r.fairness.get(notion))
                    .collect();
                let summary = if values.is_empty() {
                    NotionSummary {
                        mean: None,
                        defined_rounds: 0,
                        reason: Some(format!("{} undefined in every round of the window", notion.key())),
                    }
                } else {
                    NotionSummary {
                        mean: Some(values.iter().sum::<f64>() / values.len() as f64),
                        defined_rounds: values.len(),
                        reason: None,
                    }
                };
                (notion, summary)
            })
            .collect();
        let aux: Vec<f64> = in_window.iter().map(|r| r.aux_accuracy).collect();
        Summary {
            window,
            rounds_in_window: in_window.len(),
            notions,
            aux_accuracy: (!aux.is_empty()).then(|| aux.iter().sum::<f64>() / aux.len() as f64),
        }
    }

    pub fn mean(&self, notion: Notion) -> Option<f64> {
        self.notions.get(&notion).and_then(|s| s.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub total_seconds: f64,
    pub per_round_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    /// Participation rate `|S_k| / C`.
    pub sample_rate: f64,
    pub rejected_rows: usize,
    /// Absent unless timing was requested, so default output is reproducible
    /// byte for byte.
    pub wall_clock: Option<WallClock>,
}

/// Everything one seeded run produced; serialises to the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundRecord>,
    pub cumulative_shapley: BTreeMap<usize, f64>,
    pub summary: Summary,
    pub meta: RunMeta,
}

impl RunResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results are always serialisable")
    }

    /// Parses a results file, refusing other schema versions.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_schema(&value, &["meta", "schema_version"])?;
        Ok(serde_json::from_value(value)?)
    }

    /// Rebuilds the Shapley ledger from the per-round records.
    pub fn ledger(&self) -> Result<ShapleyLedger> {
        let population: Vec<usize> = self.cumulative_shapley.keys().copied().collect();
        let mut ledger = ShapleyLedger::new(&population);
        for r in &self.rounds {
            ledger.accumulate(r.k, &r.shapley.per_round)?;
        }
        Ok(ledger)
    }
}

pub(crate) fn check_schema(value: &serde_json::Value, path: &[&str]) -> Result<()> {
    let found = path
        .iter()
        .try_fold(value, |v, key| v.get(key))
        .and_then(|v| v.as_str());
    match found {
        Some(SCHEMA_VERSION) => Ok(()),
        Some(other) => Err(Error::SchemaMismatch {
            expected: SCHEMA_VERSION.to_string(),
            found: other.to_string(),
        }),
        None => Err(Error::SchemaMismatch {
            expected: SCHEMA_VERSION.to_string(),
            found: "<missing>".to_string(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVerdicts {
    pub threshold: f64,
    pub notions: BTreeMap<Notion, Verdict>,
    /// Verdict on general fairness.
    pub overall: Verdict,
}

/// `mean >= threshold` per notion; undefined means are indeterminate.
pub fn threshold_check(means: &BTreeMap<Notion, Option<f64>>, threshold: f64) -> ThresholdVerdicts {
    let notions: BTreeMap<Notion, Verdict> = Notion::ALL
        .into_iter()
        .map(|n| {
            let v = match means.get(&n).copied().flatten() {
                None => Verdict::Indeterminate,
                Some(m) if m >= threshold => Verdict::Pass,
                Some(_) => Verdict::Fail,
            };
            (n, v)
        })
        .collect();
    ThresholdVerdicts {
        threshold,
        overall: notions[&Notion::General],
        notions,
    }
}

/// Mean and population standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Number of seeds with a defined value.
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat {
                mean: None,
                std: None,
                n: 0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean: Some(mean),
            std: Some(var.sqrt()),
            n: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRound {
    pub k: usize,
    pub notions: BTreeMap<Notion, Stat>,
    pub aux_accuracy: Stat,
}

/// Cross-seed aggregate of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: String,
    pub name: String,
    pub seeds: Vec<u64>,
    pub window: (usize, usize),
    pub per_round: Vec<AggregateRound>,
    /// Statistics of the per-seed window means.
    pub summary: BTreeMap<Notion, Stat>,
    pub aux_accuracy: Stat,
    pub verdicts: ThresholdVerdicts,
}

impl AggregateReport {
    pub fn from_runs(runs: &[RunResult]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::config("an aggregate needs at least one run"))?;
        let rounds = first.rounds.len();
        if runs.iter().any(|r| r.rounds.len() != rounds) {
            return Err(Error::config("runs being aggregated have different round counts"));
        }
        let per_round = (0..rounds)
            .map(|i| AggregateRound {
                k: first.rounds[i].k,
                notions: Notion::ALL
                    .into_iter()
                    .map(|n| {
                        let vals: Vec<f64> = runs.iter().filter_map(|r| r.rounds[i].fairness.get(n)).collect();
                        (n, Stat::of(&vals))
                    })
                    .collect(),
                aux_accuracy: Stat::of(&runs.iter().map(|r| r.rounds[i].aux_accuracy).collect::<Vec<_>>()),
            })
            .collect();
        let summary: BTreeMap<Notion, Stat> = Notion::ALL
            .into_iter()
            .map(|n| {
                let vals: Vec<f64> = runs.iter().filter_map(|r| r.summary.mean(n)).collect();
                (n, Stat::of(&vals))
            })
            .collect();
        let means = summary.iter().map(|(n, s)| (*n, s.mean)).collect();
        let aux: Vec<f64> = runs.iter().filter_map(|r| r.summary.aux_accuracy).collect();
        Ok(AggregateReport {
            schema_version: SCHEMA_VERSION.to_string(),
            name: first.config.name.clone(),
            seeds: runs.iter().map(|r| r.meta.seed).collect(),
            window: first.summary.window,
            per_round,
            verdicts: threshold_check(&means, first.config.fairness_threshold),
            summary,
            aux_accuracy: Stat::of(&aux),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregates are always serialisable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_schema(&value, &["schema_version"])?;
        Ok(serde_json::from_value(value)?)
    }
}
