use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named sensitive attribute. Its position in the experiment's attribute
/// list is its id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitiveAttributeSpec {
    pub name: String,
    pub predicate: AttributeRule,
}

/// Declarative membership rule. Feature rules read the normalised `[0, 1]`
/// feature vector; `column_equals` reads the raw CSV cell and only applies to
/// tabular data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttributeRule {
    LabelEquals { class: usize },
    LabelIn { classes: Vec<usize> },
    FeatureAbove { feature: usize, threshold: f64 },
    FeatureBelow { feature: usize, threshold: f64 },
    ColumnEquals { column: String, value: String },
}

/// What a rule may look at for one sample.
pub(crate) struct SampleView<'a> {
    pub label: usize,
    pub features: &'a [f64],
    pub raw: Option<RawRow<'a>>,
}

/// The unparsed CSV row a sample came from.
#[derive(Clone, Copy)]
pub(crate) struct RawRow<'a> {
    pub header: &'a [String],
    pub record: &'a csv::StringRecord,
}

impl<'a> RawRow<'a> {
    fn get(&self, column: &str) -> Option<&'a str> {
        let idx = self.header.iter().position(|h| h == column)?;
        self.record.get(idx).map(str::trim)
    }
}

impl AttributeRule {
    /// Checks the rule against a dataset schema before any sample is tagged.
    pub fn check(&self, n_features: usize, n_classes: usize, tabular_columns: Option<&[String]>) -> Result<()> {
        match self {
            AttributeRule::LabelEquals { class } if *class >= n_classes => Err(Error::config(format!(
                "attribute rule names class {class} but the task has {n_classes} classes"
            ))),
            AttributeRule::LabelIn { classes } => match classes.iter().find(|&&c| c >= n_classes) {
                Some(c) => Err(Error::config(format!(
                    "attribute rule names class {c} but the task has {n_classes} classes"
                ))),
                None => Ok(()),
            },
            AttributeRule::FeatureAbove { feature, .. } | AttributeRule::FeatureBelow { feature, .. }
                if *feature >= n_features =>
            {
                Err(Error::config(format!(
                    "attribute rule reads feature {feature} but samples have {n_features} features"
                )))
            }
            AttributeRule::ColumnEquals { column, .. } => match tabular_columns {
                None => Err(Error::config(format!(
                    "column_equals on '{column}' needs a tabular dataset"
                ))),
                Some(cols) if !cols.iter().any(|c| c == column) => Err(Error::config(format!(
                    "attribute rule reads unknown column '{column}'"
                ))),
                Some(_) => Ok(()),
            },
            _ => Ok(()),
        }
    }

    pub(crate) fn flag(&self, sample: &SampleView<'_>) -> bool {
        match self {
            AttributeRule::LabelEquals { class } => sample.label == *class,
            AttributeRule::LabelIn { classes } => classes.contains(&sample.label),
            AttributeRule::FeatureAbove { feature, threshold } => sample.features[*feature] > *threshold,
            AttributeRule::FeatureBelow { feature, threshold } => sample.features[*feature] < *threshold,
            AttributeRule::ColumnEquals { column, value } => sample
                .raw
                .as_ref()
                .and_then(|row| row.get(column))
                .is_some_and(|v| v == value),
        }
    }
}

pub(crate) fn tag(specs: &[SensitiveAttributeSpec], sample: &SampleView<'_>, out: &mut Vec<u8>) {
    out.extend(specs.iter().map(|s| u8::from(s.predicate.flag(sample))));
}
