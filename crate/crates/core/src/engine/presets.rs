//! Shipped experiment presets named `{strategy}-{partition}-{scale}`.
//!
//! Scales are kept small enough to run in seconds on one core:
//! `silo` has 10 clients with half participating each round, `device` has 100
//! clients with 5 participating, and `tabular` runs an MLP on a generated
//! intrusion-detection table.

use super::config::{DatasetConfig, ExperimentConfig, PartitionConfig};
use crate::datakit::{AttributeRule, PartitionMode, SensitiveAttributeSpec, SynthSpec};
use crate::fairness::{EqOddsMode, FairnessWeights};
use crate::numkit::{ModelKind, SgdConfig};
use crate::shapley::{ShapleyWeighting, DEFAULT_MAX_PARTICIPANTS};
use crate::strategies::{StrategyConfig, StrategyKind};

const STRATEGIES: [(&str, StrategyKind); 3] = [
    ("fedavg", StrategyKind::Fedavg),
    ("qfedavg", StrategyKind::Qfedavg),
    ("ditto", StrategyKind::Ditto),
];
const PARTITIONS: [(&str, PartitionMode); 2] = [("iid", PartitionMode::Iid), ("dirichlet", PartitionMode::Dirichlet)];
const SCALES: [&str; 3] = ["silo", "device", "tabular"];

/// Every preset name, in a stable order.
pub fn names() -> Vec<String> {
    let mut out = Vec::new();
    for scale in SCALES {
        for (p, _) in PARTITIONS {
            for (s, _) in STRATEGIES {
                out.push(format!("{s}-{p}-{scale}"));
            }
        }
    }
    out
}

/// The preset called `name`, if there is one.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let mut parts = name.split('-');
    let (s, p, scale) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let kind = STRATEGIES.iter().find(|(n, _)| *n == s)?.1;
    let mode = PARTITIONS.iter().find(|(n, _)| *n == p)?.1;
    let tabular = scale == "tabular";

    let mut strategy = StrategyConfig::new(kind);
    if tabular {
        strategy.lambda = 0.85;
    }
    let (dataset, total_clients, model, local_epochs, alpha, attributes) = match scale {
        "silo" => (
            DatasetConfig::Synthetic(SynthSpec::new(6000, 10, 16)),
            10,
            ModelKind::Logistic,
            10,
            0.5,
            blob_attributes(),
        ),
        "device" => (
            DatasetConfig::Synthetic(SynthSpec::new(40000, 10, 16)),
            100,
            ModelKind::Logistic,
            10,
            0.5,
            blob_attributes(),
        ),
        "tabular" => (
            DatasetConfig::IntrusionLike { rows: 6000 },
            10,
            ModelKind::Mlp,
            5,
            3.0,
            vec![
                SensitiveAttributeSpec {
                    name: "tcp".into(),
                    predicate: AttributeRule::ColumnEquals {
                        column: "protocol_type".into(),
                        value: "tcp".into(),
                    },
                },
                SensitiveAttributeSpec {
                    name: "http".into(),
                    predicate: AttributeRule::ColumnEquals {
                        column: "service".into(),
                        value: "http".into(),
                    },
                },
            ],
        ),
        _ => return None,
    };
    Some(ExperimentConfig {
        name: name.to_string(),
        strategy,
        dataset,
        partition: PartitionConfig {
            mode,
            alpha,
            train_fraction: 0.9,
            auxiliary_fraction: 0.1,
        },
        attributes,
        model,
        total_clients,
        clients_per_round: 5,
        rounds: 30,
        local_epochs,
        local_lr: 0.05,
        batch_size: SgdConfig::DEFAULT_BATCH_SIZE,
        seeds: vec![1, 2, 3],
        fairness_weights: FairnessWeights::default(),
        shapley_weighting: ShapleyWeighting::Paper,
        shapley_max_clients: DEFAULT_MAX_PARTICIPANTS,
        eqodds_mode: EqOddsMode::Bounded,
        summary_window: (15, 30),
        fairness_threshold: 0.8,
        positive_class: 1,
        base_dir: None,
    })
}

fn blob_attributes() -> Vec<SensitiveAttributeSpec> {
    vec![
        SensitiveAttributeSpec {
            name: "f0_high".into(),
            predicate: AttributeRule::FeatureAbove {
                feature: 0,
                threshold: 0.5,
            },
        },
        SensitiveAttributeSpec {
            name: "f1_low".into(),
            predicate: AttributeRule::FeatureBelow {
                feature: 1,
                threshold: 0.4,
            },
        },
    ]
}
