use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{LabeledBatch, RngStream};

/// Smallest per-client test split the federated evaluation accepts.
pub const MIN_TEST_SAMPLES: usize = 10;

/// Dirichlet draws are repeated until every client can hold
/// [`MIN_TEST_SAMPLES`] test samples, at most this many times.
pub const MAX_DIRICHLET_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    /// Dirichlet concentration; only read in `dirichlet` mode.
    pub alpha: f64,
    pub clients: usize,
    pub train_fraction: f64,
    pub auxiliary_fraction: f64,
}

impl PartitionSpec {
    pub fn iid(clients: usize) -> Self {
        Self {
            mode: PartitionMode::Iid,
            alpha: 1.0,
            clients,
            train_fraction: 0.9,
            auxiliary_fraction: 0.1,
        }
    }

    pub fn dirichlet(clients: usize, alpha: f64) -> Self {
        Self {
            mode: PartitionMode::Dirichlet,
            alpha,
            ..Self::iid(clients)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.clients < 2 {
            return Err(Error::config(format!(
                "a federation needs at least 2 clients, got {}",
                self.clients
            )));
        }
        for (name, v) in [
            ("train_fraction", self.train_fraction),
            ("auxiliary_fraction", self.auxiliary_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }

    fn test_count(&self, n: usize) -> usize {
        n - self.train_count(n)
    }

    fn train_count(&self, n: usize) -> usize {
        ((self.train_fraction * n as f64).round() as usize).min(n)
    }

    /// Smallest shard whose split still leaves enough test samples.
    fn min_shard(&self) -> usize {
        (1..)
            .find(|&n| self.test_count(n) >= MIN_TEST_SAMPLES && self.train_count(n) >= 1)
            .expect("a large enough shard exists for fractions in (0, 1)")
    }
}

/// One client's private train/test data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: LabeledBatch,
    pub test: LabeledBatch,
}

/// The server-held dataset used only for contribution measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryDataset {
    pub data: LabeledBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clients: Vec<ClientDataset>,
    pub auxiliary: AuxiliaryDataset,
}

/// Carves a class-stratified auxiliary set from `data`, then splits the rest
/// among clients per `spec`.
pub fn partition(data: &LabeledBatch, spec: &PartitionSpec, rng: &mut RngStream) -> Result<Partition> {
    spec.validate()?;
    let mut aux = Vec::new();
    let mut pool = Vec::new();
    for mut members in positions_by_class(data, &(0..data.len()).collect::<Vec<_>>()) {
        members.shuffle(rng);
        let take = (spec.auxiliary_fraction * members.len() as f64).round() as usize;
        aux.extend_from_slice(&members[..take]);
        pool.extend_from_slice(&members[take..]);
    }
    if aux.is_empty() {
        return Err(Error::config("auxiliary fraction leaves the server with no samples"));
    }
    let clients = assign(data, &pool, spec, rng)?;
    Ok(Partition {
        clients,
        auxiliary: AuxiliaryDataset {
            data: data.select(&aux),
        },
    })
}

/// Splits all of `pool` among clients and uses `auxiliary` as the server set,
/// for datasets that ship their own held-out split.
pub fn partition_with_auxiliary(
    pool: &LabeledBatch,
    auxiliary: LabeledBatch,
    spec: &PartitionSpec,
    rng: &mut RngStream,
) -> Result<Partition> {
    spec.validate()?;
    if auxiliary.is_empty() {
        return Err(Error::config("auxiliary dataset is empty"));
    }
    let all: Vec<usize> = (0..pool.len()).collect();
    let clients = assign(pool, &all, spec, rng)?;
    Ok(Partition {
        clients,
        auxiliary: AuxiliaryDataset { data: auxiliary },
    })
}

fn positions_by_class(data: &LabeledBatch, positions: &[usize]) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); data.n_classes()];
    for &p in positions {
        by_class[data.label(p)].push(p);
    }
    by_class
}

fn assign(
    data: &LabeledBatch,
    pool: &[usize],
    spec: &PartitionSpec,
    rng: &mut RngStream,
) -> Result<Vec<ClientDataset>> {
    let mut by_class = positions_by_class(data, pool);
    for members in &mut by_class {
        members.shuffle(rng);
    }
    let shards = match spec.mode {
        PartitionMode::Iid => iid_shards(&by_class, spec.clients),
        PartitionMode::Dirichlet => dirichlet_shards(&by_class, spec, rng)?,
    };
    shards
        .into_iter()
        .enumerate()
        .map(|(client_id, mut shard)| {
            if shard.len() < spec.min_shard() {
                return Err(Error::config(format!(
                    "client {client_id} receives {} samples, leaving fewer than {MIN_TEST_SAMPLES} test samples",
                    shard.len()
                )));
            }
            shard.shuffle(rng);
            let (train, test) = shard.split_at(spec.train_count(shard.len()));
            Ok(ClientDataset {
                client_id,
                train: data.select(train),
                test: data.select(test),
            })
        })
        .collect()
}

/// Deals class-sorted samples round-robin, so shard sizes and per-class
/// counts differ by at most one and the residue goes to the lowest ids.
fn iid_shards(by_class: &[Vec<usize>], clients: usize) -> Vec<Vec<usize>> {
    let mut shards = vec![Vec::new(); clients];
    for (j, &p) in by_class.iter().flatten().enumerate() {
        shards[j % clients].push(p);
    }
    shards
}

/// Per class, draws client proportions from `Dir(alpha)` and cuts the class's
/// samples at the cumulative proportions.
fn dirichlet_shards(
    by_class: &[Vec<usize>],
    spec: &PartitionSpec,
    rng: &mut RngStream,
) -> Result<Vec<Vec<usize>>> {
    let gamma = Gamma::new(spec.alpha, 1.0)
        .map_err(|e| Error::config(format!("alpha {}: {e}", spec.alpha)))?;
    let min = spec.min_shard();
    let mut last_short = 0;
    for _ in 0..MAX_DIRICHLET_ATTEMPTS {
        let mut shards = vec![Vec::new(); spec.clients];
        for members in by_class {
            let proportions = dirichlet_draw(&gamma, spec.clients, rng);
            let mut start = 0;
            let mut acc = 0.0;
            for (c, p) in proportions.iter().enumerate() {
                acc += p;
                let end = if c + 1 == spec.clients {
                    members.len()
                } else {
                    ((acc * members.len() as f64).round() as usize).clamp(start, members.len())
                };
                shards[c].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        match shards.iter().position(|s| s.len() < min) {
            None => return Ok(shards),
            Some(c) => last_short = c,
        }
    }
    Err(Error::config(format!(
        "client {last_short} could not be given {min} samples (needed for {MIN_TEST_SAMPLES} test samples) \
         in {MAX_DIRICHLET_ATTEMPTS} Dirichlet draws; use more data, fewer clients or a larger alpha"
    )))
}

fn dirichlet_draw(gamma: &Gamma<f64>, k: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(n: usize, classes: usize) -> LabeledBatch {
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let features: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        LabeledBatch::new(features, 1, labels, classes, vec![], 0).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(PartitionSpec::iid(1).validate().is_err());
        assert!(PartitionSpec::dirichlet(4, 0.0).validate().is_err());
        let mut s = PartitionSpec::iid(4);
        s.train_fraction = 1.0;
        assert!(s.validate().is_err());
        s.train_fraction = 0.9;
        s.auxiliary_fraction = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn min_shard_for_default_split() {
        // 95 samples -> round(85.5) = 86 train, 9 test; 96 -> 86 train, 10 test
        assert_eq!(PartitionSpec::iid(2).min_shard(), 96);
    }

    #[test]
    fn deficient_client_is_named() {
        let data = balanced(150, 2);
        let err = partition(&data, &PartitionSpec::iid(4), &mut RngStream::new(0, 0)).unwrap_err();
        assert!(err.to_string().contains("client 0"), "{err}");
    }

    #[test]
    fn residue_goes_round_robin() {
        let by_class = vec![vec![0, 1, 2], vec![3, 4]];
        let shards = iid_shards(&by_class, 3);
        assert_eq!(shards, vec![vec![0, 3], vec![1, 4], vec![2]]);
    }

    #[test]
    fn auxiliary_is_stratified() {
        let data = balanced(1000, 2);
        let p = partition(&data, &PartitionSpec::iid(4), &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(p.auxiliary.data.class_counts(), vec![50, 50]);
        let client_total: usize = p.clients.iter().map(|c| c.train.len() + c.test.len()).sum();
        assert_eq!(client_total, 900);
    }
}
