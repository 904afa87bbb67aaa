//! Server-side aggregation strategies and client selection.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{train_regularized, LabeledBatch, ModelParams, RngStream, SgdConfig};

/// Loss floor applied before raising client losses to the power `q`.
pub const LOSS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Fedavg,
    Qfedavg,
    Ditto,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Fedavg => "fedavg",
            StrategyKind::Qfedavg => "qfedavg",
            StrategyKind::Ditto => "ditto",
        }
    }
}

fn default_q() -> f64 {
    0.2
}
fn default_eta_q() -> f64 {
    0.1
}
fn default_lambda() -> f64 {
    0.8
}
fn default_eta_l() -> f64 {
    0.01
}
fn default_personal_epochs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// q-FedAvg loss exponent.
    #[serde(default = "default_q")]
    pub q: f64,
    /// q-FedAvg step size; its inverse is the Lipschitz estimate `L`.
    #[serde(default = "default_eta_q")]
    pub eta_q: f64,
    /// Ditto pull towards the global model.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Ditto personal learning rate.
    #[serde(default = "default_eta_l")]
    pub eta_l: f64,
    #[serde(default = "default_personal_epochs")]
    pub personal_epochs: usize,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            q: default_q(),
            eta_q: default_eta_q(),
            lambda: default_lambda(),
            eta_l: default_eta_l(),
            personal_epochs: default_personal_epochs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q.is_finite() && self.q >= 0.0) {
            return Err(Error::config(format!("q must be >= 0, got {}", self.q)));
        }
        if !(self.eta_q.is_finite() && self.eta_q > 0.0) {
            return Err(Error::config(format!("eta_q must be > 0, got {}", self.eta_q)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.eta_l.is_finite() && self.eta_l > 0.0) {
            return Err(Error::config(format!("eta_l must be > 0, got {}", self.eta_l)));
        }
        if self.kind == StrategyKind::Ditto && self.personal_epochs == 0 {
            return Err(Error::config("ditto needs personal_epochs >= 1"));
        }
        Ok(())
    }
}

/// What a client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParams,
    pub train_size: usize,
    /// Loss of the distributed global model on the client's train split,
    /// measured before local training.
    pub local_loss_before: f64,
}

/// Uniform sample of `count` distinct clients, returned in ascending id order.
pub fn select_clients(population: &[usize], count: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if count > population.len() {
        return Err(Error::config(format!(
            "cannot select {count} clients from a population of {}",
            population.len()
        )));
    }
    let mut chosen: Vec<usize> = index::sample(rng, population.len(), count)
        .into_iter()
        .map(|i| population[i])
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

fn check_updates(reference: &ModelParams, updates: &[ClientUpdate]) -> Result<()> {
    for u in updates {
        if !reference.is_compatible(&u.params) {
            return Err(Error::protocol(format!(
                "client {} sent parameters with an incompatible layout",
                u.client_id
            )));
        }
        if u.train_size == 0 {
            return Err(Error::protocol(format!("client {} reported an empty train set", u.client_id)));
        }
    }
    Ok(())
}

/// Train-size weighted average of the client parameters.
pub fn aggregate_fedavg(updates: &[ClientUpdate]) -> Result<ModelParams> {
    let first = updates
        .first()
        .ok_or_else(|| Error::protocol("aggregation needs at least one update"))?;
    check_updates(&first.params, updates)?;
    let total: usize = updates.iter().map(|u| u.train_size).sum();
    let weights: Vec<f64> = updates
        .iter()
        .map(|u| u.train_size as f64 / total as f64)
        .collect();
    let params: Vec<&ModelParams> = updates.iter().map(|u| &u.params).collect();
    ModelParams::weighted_average(&params, &weights)
}

/// Result of a q-FedAvg server step.
#[derive(Debug, Clone, PartialEq)]
pub struct QFedAvgStep {
    pub params: ModelParams,
    /// Every client reported zero loss with `q > 0`, so the step fell back to
    /// FedAvg.
    pub fell_back: bool,
}

/// q-FFL server step with `L = 1/eta_q`:
/// `Δ_n = L (θ − θ_n)`, `h_n = q F_n^(q−1) ||Δ_n||² + L F_n^q`,
/// `θ' = θ − Σ F_n^q Δ_n / Σ h_n`.
pub fn aggregate_qfedavg(
    global: &ModelParams,
    updates: &[ClientUpdate],
    cfg: &StrategyConfig,
) -> Result<QFedAvgStep> {
    if updates.is_empty() {
        return Err(Error::protocol("aggregation needs at least one update"));
    }
    check_updates(global, updates)?;
    if cfg.q > 0.0 && updates.iter().all(|u| u.local_loss_before <= 0.0) {
        return Ok(QFedAvgStep {
            params: aggregate_fedavg(updates)?,
            fell_back: true,
        });
    }
    let lipschitz = 1.0 / cfg.eta_q;
    let mut numerator = vec![0.0; global.len()];
    let mut denominator = 0.0;
    for u in updates {
        let loss = u.local_loss_before.max(LOSS_FLOOR);
        let delta: Vec<f64> = global
            .values()
            .iter()
            .zip(u.params.values())
            .map(|(g, p)| lipschitz * (g - p))
            .collect();
        let scaled = loss.powf(cfg.q);
        for (acc, d) in numerator.iter_mut().zip(&delta) {
            *acc += scaled * d;
        }
        let norm_sq: f64 = delta.iter().map(|d| d * d).sum();
        denominator += cfg.q * loss.powf(cfg.q - 1.0) * norm_sq + lipschitz * scaled;
    }
    let mut params = global.clone();
    for (v, num) in params.values_mut().iter_mut().zip(&numerator) {
        *v -= num / denominator;
    }
    Ok(QFedAvgStep {
        params,
        fell_back: false,
    })
}

/// Ditto's personal update: `personal_epochs` of SGD at rate `eta_l` on the
/// client loss plus `lambda/2 ||v − global||²`, starting from `personal`.
pub fn ditto_personalize(
    global: &ModelParams,
    personal: &ModelParams,
    data: &LabeledBatch,
    cfg: &StrategyConfig,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<ModelParams> {
    if cfg.personal_epochs == 0 {
        return Err(Error::config("ditto needs personal_epochs >= 1"));
    }
    let sgd = SgdConfig {
        epochs: cfg.personal_epochs,
        lr: cfg.eta_l,
        batch_size,
    };
    train_regularized(personal, global, cfg.lambda, data, &sgd, rng)
}
