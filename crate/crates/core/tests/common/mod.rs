//! Independent reference implementations and shared fixtures.
#![allow(dead_code)]

use fedfair::datakit::{
    partition, AttributeRule, ClientDataset, Partition, PartitionMode, PartitionSpec, SensitiveAttributeSpec,
    SynthSpec,
};
use fedfair::engine::{DatasetConfig, ExperimentConfig, PartitionConfig};
use fedfair::fairness::{EqOddsMode, FairnessWeights};
use fedfair::numkit::{LabeledBatch, ModelKind, ModelParams, RngStream};
use fedfair::shapley::ShapleyWeighting;
use fedfair::strategies::{StrategyConfig, StrategyKind};
use rand::Rng;
use rand_distr::StandardNormal;

/// `(Σx)² / (n Σx²)`, summed naively.
pub fn jfi_oracle(x: &[f64]) -> f64 {
    let s: f64 = x.iter().sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    s * s / (x.len() as f64 * sq)
}

/// One labelled prediction: `(y == positive, ŷ == positive, has attribute)`.
pub type Outcome = (bool, bool, bool);

/// Equalised-odds score by filtering the raw outcomes; `None` when a group
/// lacks positives or negatives.
pub fn eq_odds_oracle(rows: &[Outcome], mode: EqOddsMode) -> Option<f64> {
    let rate = |group: bool, actual: bool| -> Option<f64> {
        let members: Vec<&Outcome> = rows.iter().filter(|r| r.2 == group && r.0 == actual).collect();
        if members.is_empty() {
            return None;
        }
        let hits = members.iter().filter(|r| r.1).count();
        Some(hits as f64 / members.len() as f64)
    };
    let d_tpr = rate(true, true)? - rate(false, true)?;
    let d_fpr = rate(true, false)? - rate(false, false)?;
    Some(match mode {
        EqOddsMode::Bounded => 1.0 - (d_tpr.abs() + d_fpr.abs()) / 2.0,
        EqOddsMode::PaperLiteral => (1.0 - (d_tpr + d_fpr)).abs(),
    })
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Classic Shapley values as the mean marginal contribution over all player
/// orderings.
pub fn shapley_by_permutation(m: usize, utility: &dyn Fn(&[usize]) -> f64) -> Vec<f64> {
    let players: Vec<usize> = (0..m).collect();
    let orders = permutations(&players);
    let mut phi = vec![0.0; m];
    for order in &orders {
        let mut coalition: Vec<usize> = Vec::new();
        for &p in order {
            let before = utility(&coalition);
            coalition.push(p);
            coalition.sort_unstable();
            phi[p] += utility(&coalition) - before;
        }
    }
    phi.iter().map(|v| v / orders.len() as f64).collect()
}

/// Per-round value with every marginal contribution weighted `1/m`.
pub fn paper_shapley_oracle(m: usize, utility: &dyn Fn(&[usize]) -> f64) -> Vec<f64> {
    (0..m)
        .map(|n| {
            let others: Vec<usize> = (0..m).filter(|&o| o != n).collect();
            let mut total = 0.0;
            for pick in 0..1usize << others.len() {
                let subset: Vec<usize> = others
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| pick >> i & 1 == 1)
                    .map(|(_, &o)| o)
                    .collect();
                let mut with = subset.clone();
                with.push(n);
                with.sort_unstable();
                total += utility(&with) - utility(&subset);
            }
            total / m as f64
        })
        .collect()
}

/// Member list of a coalition bitmask.
pub fn members(mask: usize, m: usize) -> Vec<usize> {
    (0..m).filter(|i| mask >> i & 1 == 1).collect()
}

/// Bitmask of a member list.
pub fn mask_of(members: &[usize]) -> usize {
    members.iter().fold(0, |acc, i| acc | 1 << i)
}

pub fn random_batch(rng: &mut RngStream, n: usize, n_features: usize, n_classes: usize) -> LabeledBatch {
    let features = (0..n * n_features).map(|_| rng.random::<f64>()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
    LabeledBatch::new(features, n_features, labels, n_classes, Vec::new(), 0).unwrap()
}

/// Model with parameters drawn from N(0, scale²).
pub fn random_model(kind: ModelKind, n_features: usize, n_classes: usize, scale: f64, rng: &mut RngStream) -> ModelParams {
    let mut p = ModelParams::init(kind, n_features, n_classes, rng);
    for v in p.values_mut() {
        *v = scale * rng.sample::<f64, _>(StandardNormal);
    }
    p
}

/// Central finite-difference gradient of the mean loss.
pub fn numeric_gradient(params: &ModelParams, data: &LabeledBatch, h: f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            (plus.loss(data).unwrap() - minus.loss(data).unwrap()) / (2.0 * h)
        })
        .collect()
}

/// Largest per-coordinate relative error `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Worst gradient error over `cases` random models of `kind`.
pub fn gradient_check(kind: ModelKind, cases: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut rng = RngStream::new(0xfeed, case as u64);
        let n_features = rng.random_range(2..7);
        let n_classes = rng.random_range(2..5);
        let rows = rng.random_range(3..12);
        let data = random_batch(&mut rng, rows, n_features, n_classes);
        let params = random_model(kind, n_features, n_classes, 0.7, &mut rng);
        let analytic = params.gradient(&data).unwrap();
        // smaller steps lose to roundoff on near-zero coordinates; larger
        // ones start crossing ReLU kinks
        let numeric = numeric_gradient(&params, &data, 1e-5);
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}

pub fn feature_attribute(feature: usize, threshold: f64) -> SensitiveAttributeSpec {
    SensitiveAttributeSpec {
        name: format!("f{feature}_above"),
        predicate: AttributeRule::FeatureAbove { feature, threshold },
    }
}

/// Two-class blob task: 10 clients, 5 per round, 30 rounds, three seeds.
pub fn two_class_config(mode: PartitionMode, kind: StrategyKind) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("{}-{:?}", kind.name(), mode).to_lowercase(),
        strategy: StrategyConfig::new(kind),
        dataset: DatasetConfig::Synthetic(SynthSpec::new(3000, 2, 8)),
        partition: PartitionConfig {
            mode,
            alpha: 0.3,
            train_fraction: 0.9,
            auxiliary_fraction: 0.1,
        },
        attributes: vec![feature_attribute(0, 0.5), feature_attribute(1, 0.4)],
        model: ModelKind::Logistic,
        total_clients: 10,
        clients_per_round: 5,
        rounds: 30,
        local_epochs: 10,
        local_lr: 0.05,
        batch_size: 32,
        seeds: vec![1, 2, 3],
        fairness_weights: FairnessWeights::default(),
        shapley_weighting: ShapleyWeighting::Paper,
        shapley_max_clients: 10,
        eqodds_mode: EqOddsMode::Bounded,
        summary_window: (15, 30),
        fairness_threshold: 0.8,
        positive_class: 1,
        base_dir: None,
    }
}

/// Small FedAvg run used for determinism checks.
pub fn golden_config() -> ExperimentConfig {
    let mut cfg = two_class_config(PartitionMode::Iid, StrategyKind::Fedavg);
    cfg.name = "golden".into();
    cfg.rounds = 5;
    cfg.summary_window = (1, 5);
    cfg.local_epochs = 2;
    cfg.seeds = vec![42];
    cfg
}

/// `clients` copies of one shard plus a server set, all from `seed`.
pub fn identical_shards(cfg: &ExperimentConfig, clients: usize, seed: u64) -> Partition {
    let (data, _) = cfg.load_dataset(seed).unwrap();
    let spec = PartitionSpec::iid(2);
    let single = partition(&data, &spec, &mut RngStream::new(seed, 99)).unwrap();
    let shard = &single.clients[0];
    Partition {
        clients: (0..clients)
            .map(|n| ClientDataset {
                client_id: n,
                train: shard.train.clone(),
                test: shard.test.clone(),
            })
            .collect(),
        auxiliary: single.auxiliary,
    }
}
