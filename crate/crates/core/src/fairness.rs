//! Fairness metrics: Jain's index, equalised-odds differences, the four
//! per-round fairness notions and their weighted combination.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{AttributeConfusion, GroupCounts};
use crate::shapley::ShapleyLedger;

/// Contributions at or below this are left out of gain sets.
pub const CONTRIBUTION_FLOOR: f64 = 1e-9;

pub const INSUFFICIENT_GROUP_SAMPLES: &str = "insufficient-group-samples";

/// Jain's fairness index `(Σx)² / (n Σx²)`, in `[1/n, 1]`.
pub fn jfi(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::undefined("JFI of an empty set"));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::config(format!("JFI needs finite non-negative values, got {v}")));
    }
    let sum: f64 = values.iter().sum();
    let sum_sq: f64 = values.iter().map(|v| v * v).sum();
    if sum_sq == 0.0 {
        return Err(Error::undefined("JFI of all-zero values is 0/0"));
    }
    Ok((sum * sum / (values.len() as f64 * sum_sq)).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqOddsMode {
    /// `1 − (|ΔTPR| + |ΔFPR|) / 2`, always in `[0, 1]`.
    #[default]
    Bounded,
    /// `|1 − (ΔTPR + ΔFPR)|`.
    PaperLiteral,
}

fn positive_rate(hits: u64, total: u64) -> f64 {
    hits as f64 / total as f64
}

/// Differences in true- and false-positive rates, `inside − outside`.
pub fn rate_gaps(confusion: &AttributeConfusion) -> Result<(f64, f64)> {
    let groups = [&confusion.outside, &confusion.inside];
    if groups.iter().any(|g| g.positives() == 0 || g.negatives() == 0) {
        return Err(Error::undefined(INSUFFICIENT_GROUP_SAMPLES));
    }
    let tpr = |g: &GroupCounts| positive_rate(g.tp, g.positives());
    let fpr = |g: &GroupCounts| positive_rate(g.fp, g.negatives());
    Ok((
        tpr(&confusion.inside) - tpr(&confusion.outside),
        fpr(&confusion.inside) - fpr(&confusion.outside),
    ))
}

/// Equalised-odds score of one attribute from rate gaps.
pub fn eq_odds_from_gaps(d_tpr: f64, d_fpr: f64, mode: EqOddsMode) -> f64 {
    match mode {
        EqOddsMode::Bounded => 1.0 - (d_tpr.abs() + d_fpr.abs()) / 2.0,
        EqOddsMode::PaperLiteral => (1.0 - (d_tpr + d_fpr)).abs(),
    }
}

/// Equalised-odds score of one attribute; 1 means exact parity in bounded mode.
pub fn eq_odds_diff(confusion: &AttributeConfusion, mode: EqOddsMode) -> Result<f64> {
    let (d_tpr, d_fpr) = rate_gaps(confusion)?;
    Ok(eq_odds_from_gaps(d_tpr, d_fpr, mode))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedAttribute {
    pub attribute: usize,
    pub reason: String,
}

/// One client's equalised-odds scores over all sensitive attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqOddsRecord {
    pub client_id: usize,
    pub per_attribute: BTreeMap<usize, f64>,
    pub skipped_attributes: Vec<SkippedAttribute>,
}

impl EqOddsRecord {
    pub fn from_confusion(client_id: usize, confusion: &[AttributeConfusion], mode: EqOddsMode) -> Self {
        let mut per_attribute = BTreeMap::new();
        let mut skipped_attributes = Vec::new();
        for (a, c) in confusion.iter().enumerate() {
            match eq_odds_diff(c, mode) {
                Ok(v) => {
                    per_attribute.insert(a, v);
                }
                Err(_) => skipped_attributes.push(SkippedAttribute {
                    attribute: a,
                    reason: INSUFFICIENT_GROUP_SAMPLES.to_string(),
                }),
            }
        }
        Self {
            client_id,
            per_attribute,
            skipped_attributes,
        }
    }

    /// Mean over the computable attributes.
    pub fn mean(&self) -> Option<f64> {
        if self.per_attribute.is_empty() {
            None
        } else {
            Some(self.per_attribute.values().sum::<f64>() / self.per_attribute.len() as f64)
        }
    }
}

/// Median; even counts average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub client_id: usize,
    pub reason: String,
}

/// Ratios `value_n / s_n` over the selected clients with usable contributions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub gains: BTreeMap<usize, f64>,
    pub exclusions: Vec<Exclusion>,
    /// Negative ratios set to zero before the JFI.
    pub clamped_negative: usize,
}

impl GainReport {
    pub fn build(values: &BTreeMap<usize, f64>, ledger: &ShapleyLedger, selected: &[usize]) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::config("no clients selected"));
        }
        let mut report = GainReport::default();
        for &n in selected {
            let x = *values
                .get(&n)
                .ok_or_else(|| Error::protocol(format!("no value reported by client {n}")))?;
            let s = ledger.total(n);
            if !(s > CONTRIBUTION_FLOOR) {
                report.exclusions.push(Exclusion {
                    client_id: n,
                    reason: format!("cumulative contribution {s:e} <= {CONTRIBUTION_FLOOR:e}"),
                });
                continue;
            }
            let mut gain = x / s;
            if gain < 0.0 {
                gain = 0.0;
                report.clamped_negative += 1;
            }
            report.gains.insert(n, gain);
        }
        Ok(report)
    }

    /// JFI of the gains.
    pub fn fairness(&self) -> Result<f64> {
        if self.gains.is_empty() {
            return Err(Error::undefined("every selected client was excluded from the gain set"));
        }
        jfi(&self.gains.values().copied().collect::<Vec<_>>())
    }
}

/// Individual fairness: JFI of performance over cumulative contribution.
pub fn individual_fairness(
    performances: &BTreeMap<usize, f64>,
    ledger: &ShapleyLedger,
    selected: &[usize],
) -> Result<(f64, GainReport)> {
    let report = GainReport::build(performances, ledger, selected)?;
    Ok((report.fairness()?, report))
}

/// Incentive fairness: JFI of reward over cumulative contribution.
pub fn incentive_fairness(
    rewards: &BTreeMap<usize, f64>,
    ledger: &ShapleyLedger,
    selected: &[usize],
) -> Result<(f64, GainReport)> {
    let report = GainReport::build(rewards, ledger, selected)?;
    Ok((report.fairness()?, report))
}

/// Group fairness: median over clients of their mean equalised-odds score.
pub fn group_fairness(records: &[EqOddsRecord]) -> Result<f64> {
    let means: Vec<f64> = records.iter().filter_map(EqOddsRecord::mean).collect();
    median(&means).ok_or_else(|| Error::undefined("no client could compute any equalised-odds score"))
}

/// Orchestrator fairness: mean normalised performance of the selected clients.
pub fn orchestrator_fairness(performances: &BTreeMap<usize, f64>, selected: &[usize]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::undefined("no clients selected"));
    }
    let mut total = 0.0;
    for n in selected {
        let x = *performances
            .get(n)
            .ok_or_else(|| Error::protocol(format!("no performance reported by client {n}")))?;
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::config(format!(
                "normalised performance of client {n} is {x}, outside [0, 1]"
            )));
        }
        total += x;
    }
    Ok(total / selected.len() as f64)
}

fn default_weight() -> f64 {
    0.25
}

/// Weights of the four notions in general fairness; they must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessWeights {
    #[serde(default = "default_weight")]
    pub w_j: f64,
    #[serde(default = "default_weight")]
    pub w_g: f64,
    #[serde(default = "default_weight")]
    pub w_r: f64,
    #[serde(default = "default_weight")]
    pub w_o: f64,
}

impl Default for FairnessWeights {
    fn default() -> Self {
        Self {
            w_j: 0.25,
            w_g: 0.25,
            w_r: 0.25,
            w_o: 0.25,
        }
    }
}

impl FairnessWeights {
    pub fn new(w_j: f64, w_g: f64, w_r: f64, w_o: f64) -> Result<Self> {
        let w = Self { w_j, w_g, w_r, w_o };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_j, self.w_g, self.w_r, self.w_o];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("fairness weights must be non-negative"));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "fairness weights w_j + w_g + w_r + w_o must equal 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// The five reported quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Notion {
    #[serde(rename = "f_j")]
    Individual,
    #[serde(rename = "f_g")]
    Group,
    #[serde(rename = "f_r")]
    Incentive,
    #[serde(rename = "f_o")]
    Orchestrator,
    #[serde(rename = "F_T")]
    General,
}

impl Notion {
    pub const ALL: [Notion; 5] = [
        Notion::Individual,
        Notion::Group,
        Notion::Incentive,
        Notion::Orchestrator,
        Notion::General,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Notion::Individual => "f_j",
            Notion::Group => "f_g",
            Notion::Incentive => "f_r",
            Notion::Orchestrator => "f_o",
            Notion::General => "F_T",
        }
    }

    pub fn from_key(key: &str) -> Option<Notion> {
        Notion::ALL.into_iter().find(|n| n.key() == key)
    }
}

/// Notion values of one round; undefined values are `None` with a reason.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessValues {
    pub f_j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_j_reason: Option<String>,
    pub f_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_g_reason: Option<String>,
    pub f_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_r_reason: Option<String>,
    pub f_o: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_o_reason: Option<String>,
    #[serde(rename = "F_T")]
    pub f_t: Option<f64>,
    #[serde(rename = "F_T_reason", default, skip_serializing_if = "Option::is_none")]
    pub f_t_reason: Option<String>,
}

impl FairnessValues {
    pub fn get(&self, notion: Notion) -> Option<f64> {
        match notion {
            Notion::Individual => self.f_j,
            Notion::Group => self.f_g,
            Notion::Incentive => self.f_r,
            Notion::Orchestrator => self.f_o,
            Notion::General => self.f_t,
        }
    }

    pub fn reason(&self, notion: Notion) -> Option<&str> {
        match notion {
            Notion::Individual => self.f_j_reason.as_deref(),
            Notion::Group => self.f_g_reason.as_deref(),
            Notion::Incentive => self.f_r_reason.as_deref(),
            Notion::Orchestrator => self.f_o_reason.as_deref(),
            Notion::General => self.f_t_reason.as_deref(),
        }
    }

    pub fn set(&mut self, notion: Notion, outcome: Result<f64>) {
        let (value, reason) = match outcome {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let (v, r) = match notion {
            Notion::Individual => (&mut self.f_j, &mut self.f_j_reason),
            Notion::Group => (&mut self.f_g, &mut self.f_g_reason),
            Notion::Incentive => (&mut self.f_r, &mut self.f_r_reason),
            Notion::Orchestrator => (&mut self.f_o, &mut self.f_o_reason),
            Notion::General => (&mut self.f_t, &mut self.f_t_reason),
        };
        *v = value;
        *r = reason;
    }
}

/// Weighted sum of the four notions; undefined if any component is.
pub fn general_fairness(values: &FairnessValues, weights: &FairnessWeights) -> Result<f64> {
    let parts = [
        (Notion::Individual, weights.w_j),
        (Notion::Group, weights.w_g),
        (Notion::Incentive, weights.w_r),
        (Notion::Orchestrator, weights.w_o),
    ];
    let missing: Vec<&str> = parts
        .iter()
        .filter(|(n, _)| values.get(*n).is_none())
        .map(|(n, _)| n.key())
        .collect();
    if !missing.is_empty() {
        return Err(Error::undefined(format!("undefined component(s): {}", missing.join(", "))));
    }
    Ok(parts
        .iter()
        .map(|(n, w)| values.get(*n).expect("checked above") * w)
        .sum())
}

/// All fairness outputs of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSnapshot {
    pub round: usize,
    pub values: FairnessValues,
    pub gains_g: BTreeMap<usize, f64>,
    pub gains_r: BTreeMap<usize, f64>,
    pub excluded_clients: Vec<Exclusion>,
    pub clamped_negative_gains: usize,
}

/// Per-client observations feeding a snapshot.
pub struct SnapshotInputs<'a> {
    pub round: usize,
    pub selected: &'a [usize],
    pub performances: &'a BTreeMap<usize, f64>,
    pub rewards: &'a BTreeMap<usize, f64>,
    pub eq_odds: &'a [EqOddsRecord],
    pub ledger: &'a ShapleyLedger,
}

pub fn snapshot(inputs: &SnapshotInputs<'_>, weights: &FairnessWeights) -> Result<FairnessSnapshot> {
    let g = GainReport::build(inputs.performances, inputs.ledger, inputs.selected)?;
    let r = GainReport::build(inputs.rewards, inputs.ledger, inputs.selected)?;
    let mut values = FairnessValues::default();
    values.set(Notion::Individual, g.fairness());
    values.set(Notion::Group, group_fairness(inputs.eq_odds));
    values.set(Notion::Incentive, r.fairness());
    values.set(
        Notion::Orchestrator,
        orchestrator_fairness(inputs.performances, inputs.selected),
    );
    values.set(Notion::General, general_fairness(&values, weights));
    // both gain sets share the same contribution floor, so exclusions coincide
    Ok(FairnessSnapshot {
        round: inputs.round,
        values,
        gains_g: g.gains,
        gains_r: r.gains,
        excluded_clients: g.exclusions,
        clamped_negative_gains: g.clamped_negative + r.clamped_negative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> GroupCounts {
        GroupCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn jfi_reference_values() {
        assert!((jfi(&[0.3; 4]).unwrap() - 1.0).abs() < 1e-15);
        assert!((jfi(&[7.0, 0.0, 0.0, 0.0, 0.0]).unwrap() - 0.2).abs() < 1e-15);
        assert!((jfi(&[1.0, 2.0, 3.0]).unwrap() - 6.0 / 7.0).abs() < 1e-15);
        assert!((jfi(&[2.5]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jfi_errors() {
        assert!(matches!(jfi(&[0.0, 0.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(jfi(&[]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(jfi(&[1.0, -1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn eq_odds_modes() {
        assert_eq!(eq_odds_from_gaps(0.0, 0.0, EqOddsMode::Bounded), 1.0);
        assert_eq!(eq_odds_from_gaps(0.0, 0.0, EqOddsMode::PaperLiteral), 1.0);
        assert!((eq_odds_from_gaps(0.2, 0.1, EqOddsMode::Bounded) - 0.85).abs() < 1e-15);
        assert!((eq_odds_from_gaps(0.2, 0.1, EqOddsMode::PaperLiteral) - 0.7).abs() < 1e-15);
        assert_eq!(eq_odds_from_gaps(1.0, 1.0, EqOddsMode::Bounded), 0.0);
        assert_eq!(eq_odds_from_gaps(1.0, 1.0, EqOddsMode::PaperLiteral), 1.0);
    }

    #[test]
    fn eq_odds_needs_both_outcomes_in_both_groups() {
        let c = AttributeConfusion {
            outside: counts(3, 1, 2, 1),
            inside: counts(2, 0, 0, 1),
        };
        let err = eq_odds_diff(&c, EqOddsMode::Bounded).unwrap_err();
        assert!(err.to_string().contains(INSUFFICIENT_GROUP_SAMPLES));
        let rec = EqOddsRecord::from_confusion(4, &[c], EqOddsMode::Bounded);
        assert!(rec.per_attribute.is_empty());
        assert_eq!(rec.skipped_attributes[0].attribute, 0);
        assert_eq!(rec.mean(), None);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[0.6, 1.0, 0.8]), Some(0.8));
        assert!((median(&[1.0, 0.6, 0.9, 0.8]).unwrap() - 0.85).abs() < 1e-15);
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn group_fairness_skips_empty_records() {
        let rec = |id, vals: &[f64]| EqOddsRecord {
            client_id: id,
            per_attribute: vals.iter().copied().enumerate().collect(),
            skipped_attributes: vec![],
        };
        let records = vec![rec(0, &[0.6]), rec(1, &[0.7, 0.9]), rec(2, &[1.0]), rec(3, &[])];
        assert!((group_fairness(&records).unwrap() - 0.8).abs() < 1e-15);
        assert!(group_fairness(&[rec(0, &[])]).is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(FairnessWeights::new(0.3, 0.3, 0.2, 0.1).is_err());
        assert!(FairnessWeights::new(1.0, 0.0, 0.0, 0.0).is_ok());
        assert!(FairnessWeights::new(1.2, -0.2, 0.0, 0.0).is_err());
    }

    #[test]
    fn general_fairness_examples() {
        let mut v = FairnessValues::default();
        for (n, x) in [
            (Notion::Individual, 0.8),
            (Notion::Group, 0.6),
            (Notion::Incentive, 1.0),
            (Notion::Orchestrator, 0.6),
        ] {
            v.set(n, Ok(x));
        }
        assert!((general_fairness(&v, &FairnessWeights::default()).unwrap() - 0.75).abs() < 1e-12);
        let only_j = FairnessWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(general_fairness(&v, &only_j).unwrap(), 0.8);
        v.set(Notion::Group, Err(Error::undefined("x")));
        let err = general_fairness(&v, &FairnessWeights::default()).unwrap_err();
        assert!(err.to_string().contains("f_g"));
    }

    #[test]
    fn undefined_values_serialise_with_reason() {
        let mut v = FairnessValues::default();
        v.set(Notion::Individual, Ok(0.5));
        v.set(Notion::General, Err(Error::undefined("nope")));
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["f_j"], 0.5);
        assert!(json["F_T"].is_null());
        assert!(json["F_T_reason"].as_str().unwrap().contains("nope"));
        assert!(json.get("f_j_reason").is_none());
        let back: FairnessValues = serde_json::from_value(json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn gain_exclusions() {
        let mut ledger = ShapleyLedger::new(&[0, 1, 2]);
        ledger
            .accumulate(1, &BTreeMap::from([(0, 0.3), (1, 0.3), (2, 0.0)]))
            .unwrap();
        let perf = BTreeMap::from([(0, 0.9), (1, 0.6), (2, 0.3)]);
        let report = GainReport::build(&perf, &ledger, &[0, 1, 2]).unwrap();
        assert_eq!(report.exclusions.len(), 1);
        assert_eq!(report.exclusions[0].client_id, 2);
        assert_eq!(report.gains.len(), 2);
        let none = ShapleyLedger::new(&[0]);
        let err = individual_fairness(&BTreeMap::from([(0, 1.0)]), &none, &[0]).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric(_)));
    }
}
