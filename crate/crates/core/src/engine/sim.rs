use std::collections::BTreeMap;
use std::time::Instant;

use super::config::ExperimentConfig;
use super::results::{
    AggregateReport, ClientRoundRecord, RoundRecord, RoundShapleyRecord, RunMeta, RunResult, Summary,
    WallClock, SCHEMA_VERSION,
};
use super::stream;
use crate::datakit::{partition, Partition};
use crate::error::{Error, Result};
use crate::fairness::{snapshot, EqOddsRecord, SnapshotInputs};
use crate::numkit::{evaluate, train_local, ModelParams, RngStream};
use crate::par::{self, ExecMode};
use crate::shapley::{round_shapley, ShapleyLedger, ShapleyOptions};
use crate::strategies::{
    aggregate_fedavg, aggregate_qfedavg, ditto_personalize, select_clients, ClientUpdate, StrategyKind,
};

/// How local-training streams are keyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClientSeeding {
    /// One stream per `(round, client)`.
    #[default]
    PerClient,
    /// Every client of a round draws from the same stream, so clients holding
    /// identical shards produce identical models.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub exec: ExecMode,
    pub client_seeding: ClientSeeding,
    /// Records wall-clock time per round in the results metadata.
    pub record_timing: bool,
}

/// State of one seeded run.
pub struct Simulation {
    config: ExperimentConfig,
    seed: u64,
    opts: RunOptions,
    /// Client id to position in `partition.clients`.
    clients: BTreeMap<usize, usize>,
    partition: Partition,
    population: Vec<usize>,
    global: ModelParams,
    personal: BTreeMap<usize, ModelParams>,
    ledger: ShapleyLedger,
    rounds: Vec<RoundRecord>,
    round_seconds: Vec<f64>,
    rejected_rows: usize,
}

struct ClientOutcome {
    record: ClientRoundRecord,
    update: ClientUpdate,
    personal: Option<ModelParams>,
}

impl Simulation {
    /// Validates the config, builds the dataset and partition for `seed`, and
    /// initialises the global model.
    pub fn new(config: ExperimentConfig, seed: u64, opts: RunOptions) -> Result<Self> {
        config.validate()?;
        let (data, rejected) = config.load_dataset(seed)?;
        let mut rng = RngStream::derive(seed, &[stream::PARTITION]);
        let split = partition(&data, &config.partition_spec(), &mut rng)?;
        let mut sim = Self::from_parts(config, seed, split, opts)?;
        sim.rejected_rows = rejected;
        Ok(sim)
    }

    /// Runs on a caller-built partition; client ids are taken from it.
    pub fn from_parts(config: ExperimentConfig, seed: u64, split: Partition, opts: RunOptions) -> Result<Self> {
        config.validate()?;
        if split.clients.len() != config.total_clients {
            return Err(Error::config(format!(
                "partition has {} clients but total_clients is {}",
                split.clients.len(),
                config.total_clients
            )));
        }
        let first = &split.clients[0].train;
        let (n_features, n_classes) = (first.n_features(), first.n_classes());
        let mut rng = RngStream::derive(seed, &[stream::INIT]);
        let global = ModelParams::init(config.model, n_features, n_classes, &mut rng);
        let mut clients = BTreeMap::new();
        for (i, c) in split.clients.iter().enumerate() {
            if c.train.n_features() != n_features || c.test.n_features() != n_features {
                return Err(Error::config(format!("client {} has a different feature count", c.client_id)));
            }
            if c.train.is_empty() || c.test.is_empty() {
                return Err(Error::config(format!("client {} has an empty train or test set", c.client_id)));
            }
            if clients.insert(c.client_id, i).is_some() {
                return Err(Error::config(format!("duplicate client id {}", c.client_id)));
            }
        }
        let population: Vec<usize> = clients.keys().copied().collect();
        let personal = match config.strategy.kind {
            StrategyKind::Ditto => population.iter().map(|&n| (n, global.clone())).collect(),
            _ => BTreeMap::new(),
        };
        Ok(Self {
            ledger: ShapleyLedger::new(&population),
            config,
            seed,
            opts,
            clients,
            partition: split,
            population,
            global,
            personal,
            rounds: Vec::new(),
            round_seconds: Vec::new(),
            rejected_rows: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn ledger(&self) -> &ShapleyLedger {
        &self.ledger
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.rounds.len()
    }

    fn client_round(&self, k: usize, n: usize) -> Result<ClientOutcome> {
        let cfg = &self.config;
        let data = &self.partition.clients[self.clients[&n]];
        let key = match self.opts.client_seeding {
            ClientSeeding::PerClient => n as u64,
            ClientSeeding::Shared => u64::MAX,
        };

        // reward: the distributed model, before any local work
        let before = evaluate(&self.global, &data.test, cfg.positive_class)?;
        let local_loss_before = self.global.loss(&data.train)?;

        let mut rng = RngStream::derive(self.seed, &[stream::TRAIN, k as u64, key]);
        let trained = train_local(&self.global, &data.train, &cfg.sgd(), &mut rng)?;

        let personal = match cfg.strategy.kind {
            StrategyKind::Ditto => {
                let mut rng = RngStream::derive(self.seed, &[stream::PERSONAL, k as u64, key]);
                Some(ditto_personalize(
                    &self.global,
                    &self.personal[&n],
                    &data.train,
                    &cfg.strategy,
                    cfg.batch_size,
                    &mut rng,
                )?)
            }
            _ => None,
        };
        let after = evaluate(personal.as_ref().unwrap_or(&trained), &data.test, cfg.positive_class)?;

        let record = ClientRoundRecord {
            client_id: n,
            round: k,
            performance: after.accuracy,
            reward: before.accuracy,
            eqodds: EqOddsRecord::from_confusion(n, &after.confusion, cfg.eqodds_mode),
            eqodds_before_training: EqOddsRecord::from_confusion(n, &before.confusion, cfg.eqodds_mode),
            train_size: data.train.len(),
            test_size: data.test.len(),
            local_loss_before,
        };
        let update = ClientUpdate {
            client_id: n,
            params: trained,
            train_size: data.train.len(),
            local_loss_before,
        };
        Ok(ClientOutcome {
            record,
            update,
            personal,
        })
    }

    /// Executes round `k = round() + 1` and returns its record.
    pub fn run_round(&mut self) -> Result<&RoundRecord> {
        let k = self.rounds.len() + 1;
        if k > self.config.rounds {
            return Err(Error::protocol(format!("all {} rounds already ran", self.config.rounds)));
        }
        let started = Instant::now();

        let mut rng = RngStream::derive(self.seed, &[stream::SELECT, k as u64]);
        let selected = select_clients(&self.population, self.config.clients_per_round, &mut rng)?;

        let outcomes = par::try_map(self.opts.exec, &selected, |&n| self.client_round(k, n))?;

        let updates: Vec<ClientUpdate> = outcomes.iter().map(|o| o.update.clone()).collect();
        let (next, fallback) = match self.config.strategy.kind {
            StrategyKind::Fedavg | StrategyKind::Ditto => (aggregate_fedavg(&updates)?, false),
            StrategyKind::Qfedavg => {
                let step = aggregate_qfedavg(&self.global, &updates, &self.config.strategy)?;
                (step.params, step.fell_back)
            }
        };

        let round_params: BTreeMap<usize, ModelParams> =
            updates.into_iter().map(|u| (u.client_id, u.params)).collect();
        let opts = ShapleyOptions {
            weighting: self.config.shapley_weighting,
            max_participants: self.config.shapley_max_clients,
            exec: self.opts.exec,
        };
        let shapley = round_shapley(k, &round_params, &selected, &self.global, &self.partition.auxiliary, &opts)?;
        self.ledger.accumulate(k, &shapley.values)?;

        let performances: BTreeMap<usize, f64> =
            outcomes.iter().map(|o| (o.record.client_id, o.record.performance)).collect();
        let rewards: BTreeMap<usize, f64> = outcomes.iter().map(|o| (o.record.client_id, o.record.reward)).collect();
        let eq_odds: Vec<EqOddsRecord> = outcomes.iter().map(|o| o.record.eqodds.clone()).collect();
        let snap = snapshot(
            &SnapshotInputs {
                round: k,
                selected: &selected,
                performances: &performances,
                rewards: &rewards,
                eq_odds: &eq_odds,
                ledger: &self.ledger,
            },
            &self.config.fairness_weights,
        )?;

        let aux_accuracy = evaluate(&next, &self.partition.auxiliary.data, self.config.positive_class)?.accuracy;
        self.global = next;
        let mut clients = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            if let Some(p) = o.personal {
                self.personal.insert(o.record.client_id, p);
            }
            clients.push(o.record);
        }
        self.rounds.push(RoundRecord {
            k,
            selected,
            fairness: snap.values,
            gains_g: snap.gains_g,
            gains_r: snap.gains_r,
            excluded_clients: snap.excluded_clients,
            clamped_negative_gains: snap.clamped_negative_gains,
            clients,
            shapley: RoundShapleyRecord {
                per_round: shapley.values,
            },
            aux_accuracy,
            aggregation_fallback: fallback,
        });
        self.round_seconds.push(started.elapsed().as_secs_f64());
        Ok(self.rounds.last().expect("round just pushed"))
    }

    /// Runs the remaining rounds and packages the result.
    pub fn finish(mut self) -> Result<RunResult> {
        while self.rounds.len() < self.config.rounds {
            self.run_round()?;
        }
        let summary = Summary::compute(&self.rounds, self.config.summary_window);
        let wall_clock = self.opts.record_timing.then(|| WallClock {
            total_seconds: self.round_seconds.iter().sum(),
            per_round_seconds: self.round_seconds.clone(),
        });
        let versions = BTreeMap::from([(
            env!("CARGO_PKG_NAME").to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        )]);
        Ok(RunResult {
            meta: RunMeta {
                schema_version: SCHEMA_VERSION.to_string(),
                seed: self.seed,
                versions,
                sample_rate: self.config.sample_rate(),
                rejected_rows: self.rejected_rows,
                wall_clock,
            },
            cumulative_shapley: self.ledger.cumulative().clone(),
            rounds: self.rounds,
            summary,
            config: self.config,
        })
    }
}

/// One complete run for `seed`.
pub fn run_seed(config: &ExperimentConfig, seed: u64, opts: RunOptions) -> Result<RunResult> {
    Simulation::new(config.clone(), seed, opts)?.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub runs: Vec<RunResult>,
    pub aggregate: AggregateReport,
}

/// Independent runs for every configured seed plus their aggregate. Seeds
/// run concurrently; results come back in seed order.
pub fn run_experiment(config: &ExperimentConfig, opts: RunOptions) -> Result<ExperimentOutput> {
    config.validate()?;
    let runs = par::try_map(opts.exec, &config.seeds, |&seed| run_seed(config, seed, opts))?;
    let aggregate = AggregateReport::from_runs(&runs)?;
    Ok(ExperimentOutput { runs, aggregate })
}
