//! Exact per-round federated Shapley values.
//!
//! The utility of a coalition `Z` of round participants is the drop in
//! auxiliary-set loss achieved by the unweighted mean of their submitted
//! parameters, relative to the global model they started from. `U(∅) = 0`.
//! Coalitions are bitmasks over the positions of the round's participants in
//! ascending id order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datakit::AuxiliaryDataset;
use crate::error::{Error, Result};
use crate::numkit::ModelParams;
use crate::par::{self, ExecMode};

/// Largest participant set enumerated exactly (2^10 coalitions).
pub const DEFAULT_MAX_PARTICIPANTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyWeighting {
    /// Every marginal contribution weighted `1/|S_k|`.
    #[default]
    Paper,
    /// Standard Shapley weights `1 / (|S_k| * C(|S_k|−1, |S_i|))`.
    Classic,
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn coefficients(m: usize, weighting: ShapleyWeighting) -> Vec<f64> {
    (0..m)
        .map(|size| match weighting {
            ShapleyWeighting::Paper => 1.0 / m as f64,
            ShapleyWeighting::Classic => 1.0 / (m as f64 * binomial(m - 1, size)),
        })
        .collect()
}

/// Shapley values from a complete utility table indexed by coalition mask
/// (`table.len() == 2^m`).
pub fn shapley_from_table(table: &[f64], weighting: ShapleyWeighting) -> Vec<f64> {
    let m = table.len().trailing_zeros() as usize;
    assert_eq!(table.len(), 1 << m, "utility table must have 2^m entries");
    shapley_with(m, |mask| table[mask], weighting)
}

/// Shapley values evaluating `utility` afresh for every marginal term.
pub fn shapley_with<F>(m: usize, utility: F, weighting: ShapleyWeighting) -> Vec<f64>
where
    F: Fn(usize) -> f64,
{
    let coef = coefficients(m, weighting);
    (0..m)
        .map(|n| {
            let bit = 1usize << n;
            (0..1usize << m)
                .filter(|mask| mask & bit == 0)
                .map(|mask| coef[mask.count_ones() as usize] * (utility(mask | bit) - utility(mask)))
                .sum()
        })
        .collect()
}

/// Memoised coalition utilities for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityCache {
    pub round: usize,
    /// Participant ids; bit `i` of a mask refers to `participants[i]`.
    pub participants: Vec<usize>,
    values: Vec<f64>,
}

impl UtilityCache {
    pub fn get(&self, mask: usize) -> f64 {
        self.values[mask]
    }

    pub fn table(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Everything needed to score coalitions of one round.
pub struct RoundUtility<'a> {
    participants: Vec<usize>,
    params: Vec<&'a ModelParams>,
    aux: &'a AuxiliaryDataset,
    base_loss: f64,
}

impl<'a> RoundUtility<'a> {
    pub fn new(
        round_params: &'a BTreeMap<usize, ModelParams>,
        participants: &[usize],
        global_before: &ModelParams,
        aux: &'a AuxiliaryDataset,
    ) -> Result<Self> {
        if aux.data.is_empty() {
            return Err(Error::config("auxiliary dataset is empty"));
        }
        let mut ids = participants.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let params = ids
            .iter()
            .map(|n| {
                let p = round_params
                    .get(n)
                    .ok_or_else(|| Error::protocol(format!("no parameters submitted by client {n}")))?;
                global_before.check_compatible(p)?;
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            participants: ids,
            params,
            aux,
            base_loss: global_before.loss(&aux.data)?,
        })
    }

    pub fn participants(&self) -> &[usize] {
        &self.participants
    }

    /// `ℓ(θ_k; D) − ℓ(mean of coalition; D)`, zero for the empty coalition.
    pub fn utility(&self, mask: usize) -> Result<f64> {
        if mask == 0 {
            return Ok(0.0);
        }
        let members: Vec<&ModelParams> = (0..self.params.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| self.params[i])
            .collect();
        let mean = ModelParams::average(&members)?;
        Ok(self.base_loss - mean.loss(&self.aux.data)?)
    }

    /// Evaluates every coalition once.
    pub fn cache(&self, round: usize, mode: ExecMode) -> Result<UtilityCache> {
        let values = par::map_range(mode, 1 << self.participants.len(), |mask| self.utility(mask))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(UtilityCache {
            round,
            participants: self.participants.clone(),
            values,
        })
    }
}

/// Utility of coalition `subset` (client ids) for one round.
pub fn subset_utility(
    round_params: &BTreeMap<usize, ModelParams>,
    subset: &[usize],
    global_before: &ModelParams,
    aux: &AuxiliaryDataset,
) -> Result<f64> {
    if subset.is_empty() {
        return Ok(0.0);
    }
    let u = RoundUtility::new(round_params, subset, global_before, aux)?;
    u.utility((1 << u.participants.len()) - 1)
}

/// Shapley values of one round together with the coalition utilities behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundShapley {
    pub values: BTreeMap<usize, f64>,
    pub cache: UtilityCache,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapleyOptions {
    pub weighting: ShapleyWeighting,
    pub max_participants: usize,
    pub exec: ExecMode,
}

impl Default for ShapleyOptions {
    fn default() -> Self {
        Self {
            weighting: ShapleyWeighting::Paper,
            max_participants: DEFAULT_MAX_PARTICIPANTS,
            exec: ExecMode::default(),
        }
    }
}

pub fn check_participant_cap(participants: usize, cap: usize) -> Result<()> {
    if participants > cap {
        return Err(Error::config(format!(
            "exact Shapley enumeration is capped at {cap} participants per round, got {participants}; \
             sampling approximations are not supported"
        )));
    }
    Ok(())
}

/// Exact Shapley values of round `round` for the participants in `selected`.
pub fn round_shapley(
    round: usize,
    round_params: &BTreeMap<usize, ModelParams>,
    selected: &[usize],
    global_before: &ModelParams,
    aux: &AuxiliaryDataset,
    opts: &ShapleyOptions,
) -> Result<RoundShapley> {
    check_participant_cap(selected.len(), opts.max_participants)?;
    let utility = RoundUtility::new(round_params, selected, global_before, aux)?;
    let cache = utility.cache(round, opts.exec)?;
    let shares = shapley_from_table(cache.table(), opts.weighting);
    let values = cache.participants.iter().copied().zip(shares).collect();
    Ok(RoundShapley { values, cache })
}

/// Per-round and cumulative Shapley values for a fixed client population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyLedger {
    population: Vec<usize>,
    per_round: BTreeMap<usize, BTreeMap<usize, f64>>,
    cumulative: BTreeMap<usize, f64>,
}

impl ShapleyLedger {
    pub fn new(population: &[usize]) -> Self {
        Self {
            population: population.to_vec(),
            per_round: BTreeMap::new(),
            cumulative: population.iter().map(|&n| (n, 0.0)).collect(),
        }
    }

    /// Records round `round`. Clients of the population absent from `values`
    /// get an explicit zero.
    pub fn accumulate(&mut self, round: usize, values: &BTreeMap<usize, f64>) -> Result<()> {
        if self.per_round.contains_key(&round) {
            return Err(Error::protocol(format!("round {round} is already in the ledger")));
        }
        if let Some(stranger) = values.keys().find(|n| !self.cumulative.contains_key(n)) {
            return Err(Error::protocol(format!(
                "client {stranger} is not part of the population"
            )));
        }
        let row: BTreeMap<usize, f64> = self
            .population
            .iter()
            .map(|&n| (n, values.get(&n).copied().unwrap_or(0.0)))
            .collect();
        for (n, s) in &row {
            *self.cumulative.get_mut(n).expect("population member") += s;
        }
        self.per_round.insert(round, row);
        Ok(())
    }

    pub fn round(&self, round: usize) -> Option<&BTreeMap<usize, f64>> {
        self.per_round.get(&round)
    }

    pub fn per_round(&self) -> &BTreeMap<usize, BTreeMap<usize, f64>> {
        &self.per_round
    }

    pub fn cumulative(&self) -> &BTreeMap<usize, f64> {
        &self.cumulative
    }

    pub fn total(&self, client: usize) -> f64 {
        self.cumulative.get(&client).copied().unwrap_or(0.0)
    }

    pub fn population(&self) -> &[usize] {
        &self.population
    }
}
