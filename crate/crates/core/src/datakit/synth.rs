use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::attributes::{tag, SampleView, SensitiveAttributeSpec};
use super::tabular::{ColumnRole, ColumnSpec, CsvSchema};
use crate::error::{Error, Result};
use crate::numkit::{LabeledBatch, RngStream};

fn default_separation() -> f64 {
    3.0
}

/// Gaussian-blob classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    pub n_features: usize,
    /// Per-class sampling weights; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<Vec<f64>>,
    /// Distance between class centres in units of the per-feature noise sigma.
    #[serde(default = "default_separation")]
    pub separation: f64,
}

impl SynthSpec {
    pub fn new(n_samples: usize, n_classes: usize, n_features: usize) -> Self {
        Self {
            n_samples,
            n_classes,
            n_features,
            class_weights: None,
            separation: default_separation(),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.class_weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.n_classes as f64; self.n_classes])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("synthetic data needs at least two classes"));
        }
        if self.n_features == 0 {
            return Err(Error::config("synthetic data needs at least one feature"));
        }
        if self.n_samples == 0 {
            return Err(Error::config("synthetic data needs at least one sample"));
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return Err(Error::config("class separation must be finite and non-negative"));
        }
        let w = self.weights();
        if w.len() != self.n_classes {
            return Err(Error::config(format!(
                "{} class weights given for {} classes",
                w.len(),
                self.n_classes
            )));
        }
        if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::config("class weights must be non-negative"));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("class weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Draws labels from the class weights, places each class's centre
/// `separation` sigmas from the others, adds unit Gaussian noise and min-max
/// scales every feature into `[0, 1]`.
pub fn synth_classification(
    spec: &SynthSpec,
    attributes: &[SensitiveAttributeSpec],
    rng: &mut RngStream,
) -> Result<LabeledBatch> {
    spec.validate()?;
    for a in attributes {
        a.predicate.check(spec.n_features, spec.n_classes, None)?;
    }
    let (n, d, k) = (spec.n_samples, spec.n_features, spec.n_classes);
    let centres = class_centres(k, d, spec.separation, rng);
    let picker = WeightedIndex::new(spec.weights())
        .map_err(|e| Error::config(format!("class weights: {e}")))?;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut labels = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n * d);
    for _ in 0..n {
        let y = picker.sample(rng);
        labels.push(y);
        raw.extend(centres[y].iter().map(|c| c + noise.sample(rng)));
    }
    min_max_columns(&mut raw, d);

    let mut flags = Vec::with_capacity(n * attributes.len());
    for (i, &y) in labels.iter().enumerate() {
        let view = SampleView {
            label: y,
            features: &raw[i * d..(i + 1) * d],
            raw: None,
        };
        tag(attributes, &view, &mut flags);
    }
    LabeledBatch::new(raw, d, labels, k, flags, attributes.len())
}

fn class_centres(k: usize, d: usize, separation: f64, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let radius = separation / std::f64::consts::SQRT_2;
    if k <= d {
        // orthogonal axes: every pair of centres is exactly `separation` apart
        (0..k)
            .map(|c| (0..d).map(|j| if j == c { radius } else { 0.0 }).collect())
            .collect()
    } else {
        (0..k)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x * radius / norm).collect()
            })
            .collect()
    }
}

/// Scales each column of a row-major matrix into `[0, 1]`; constant columns
/// become 0.
pub(crate) fn min_max_columns(values: &mut [f64], width: usize) {
    if values.is_empty() {
        return;
    }
    for j in 0..width {
        let column = values.iter().skip(j).step_by(width);
        let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        for v in values.iter_mut().skip(j).step_by(width) {
            *v = if span > 0.0 {
                ((*v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
}

/// Column layout of [`intrusion_like_csv`]: 41 attributes plus a label.
pub const INTRUSION_CATEGORICAL: [(&str, &[&str]); 3] = [
    ("protocol_type", &["tcp", "udp", "icmp"]),
    ("service", &["http", "smtp", "ftp", "domain", "private", "other"]),
    ("flag", &["SF", "S0", "REJ", "RSTO"]),
];

/// Writes a synthetic network-traffic table shaped like NSL-KDD: 3
/// categorical and 38 continuous attributes and a binary `label` column
/// (`normal` / `attack`). Attack rows shift several continuous columns.
pub fn intrusion_like_csv(rows: usize, rng: &mut RngStream) -> String {
    let continuous = 41 - INTRUSION_CATEGORICAL.len();
    let mut out = String::new();
    let mut header: Vec<String> = INTRUSION_CATEGORICAL.iter().map(|(n, _)| n.to_string()).collect();
    header.extend((0..continuous).map(|j| format!("c{j:02}")));
    header.push("label".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for _ in 0..rows {
        let attack = rng.random_bool(0.45);
        let mut cells: Vec<String> = Vec::with_capacity(42);
        for (_, cats) in INTRUSION_CATEGORICAL.iter() {
            // attacks favour the later categories of each field
            let skew = if attack { cats.len() / 2 } else { 0 };
            let idx = if rng.random_bool(0.7) {
                (skew + rng.random_range(0..cats.len().div_ceil(2))).min(cats.len() - 1)
            } else {
                rng.random_range(0..cats.len())
            };
            cells.push(cats[idx].to_string());
        }
        for j in 0..continuous {
            let shift = if attack && j % 3 == 0 { 1.5 } else { 0.0 };
            let v: f64 = rng.sample::<f64, _>(StandardNormal) + shift;
            if j % 5 == 4 {
                // count-like columns
                cells.push(format!("{}", (v.abs() * 20.0).round()));
            } else {
                cells.push(format!("{v:.5}"));
            }
        }
        cells.push(if attack { "attack" } else { "normal" }.to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Schema matching [`intrusion_like_csv`].
pub fn intrusion_like_schema() -> CsvSchema {
    let mut columns: Vec<ColumnSpec> = INTRUSION_CATEGORICAL
        .iter()
        .map(|(name, cats)| ColumnSpec {
            name: name.to_string(),
            role: ColumnRole::Categorical {
                categories: cats.iter().map(|c| c.to_string()).collect(),
            },
        })
        .collect();
    columns.extend((0..41 - INTRUSION_CATEGORICAL.len()).map(|j| ColumnSpec {
        name: format!("c{j:02}"),
        role: ColumnRole::Continuous,
    }));
    columns.push(ColumnSpec {
        name: "label".into(),
        role: ColumnRole::Label {
            classes: vec!["normal".into(), "attack".into()],
        },
    });
    CsvSchema { columns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::AttributeRule;

    #[test]
    fn features_are_normalised_and_deterministic() {
        let spec = SynthSpec::new(300, 3, 4);
        let a = synth_classification(&spec, &[], &mut RngStream::new(1, 0)).unwrap();
        let b = synth_classification(&spec, &[], &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.features().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.len(), 300);
    }

    #[test]
    fn skew_one_hot_gives_single_class() {
        let mut spec = SynthSpec::new(200, 2, 2);
        spec.class_weights = Some(vec![1.0, 0.0]);
        let b = synth_classification(&spec, &[], &mut RngStream::new(2, 0)).unwrap();
        assert!(b.labels().iter().all(|&y| y == 0));
    }

    #[test]
    fn label_attribute_matches_indicator() {
        let spec = SynthSpec::new(500, 2, 3);
        let attrs = [SensitiveAttributeSpec {
            name: "positive".into(),
            predicate: AttributeRule::LabelEquals { class: 1 },
        }];
        let b = synth_classification(&spec, &attrs, &mut RngStream::new(3, 0)).unwrap();
        let indicator: Vec<u8> = b.labels().iter().map(|&y| u8::from(y == 1)).collect();
        assert_eq!(b.attribute_column(0), indicator);
    }

    #[test]
    fn invalid_weights_rejected() {
        let mut spec = SynthSpec::new(10, 2, 2);
        spec.class_weights = Some(vec![1.2, -0.2]);
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        spec.class_weights = Some(vec![0.5, 0.4]);
        assert!(spec.validate().is_err());
        spec.class_weights = Some(vec![1.0]);
        assert!(spec.validate().is_err());
        assert!(SynthSpec::new(10, 1, 2).validate().is_err());
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let mut m = vec![5.0, 1.0, 5.0, 3.0, 5.0, 2.0];
        min_max_columns(&mut m, 2);
        assert_eq!(m, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.5]);
    }

    #[test]
    fn intrusion_table_has_42_columns() {
        let text = intrusion_like_csv(5, &mut RngStream::new(0, 0));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines.iter().all(|l| l.split(',').count() == 42));
    }
}
