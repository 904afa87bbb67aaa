use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::attributes::{tag, RawRow, SampleView, SensitiveAttributeSpec};
use super::synth::min_max_columns;
use crate::error::{Error, Result};
use crate::numkit::LabeledBatch;

/// Role of one CSV column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case", deny_unknown_fields)]
pub enum ColumnRole {
    /// Numeric, min-max normalised into `[0, 1]`.
    Continuous,
    /// One-hot encoded over the declared categories.
    Categorical { categories: Vec<String> },
    /// Class label; `classes[i]` maps to class id `i`.
    Label { classes: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub role: ColumnRole,
}

/// Column roles for a tabular dataset. Every header column must be listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub columns: Vec<ColumnSpec>,
}

impl CsvSchema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config(format!("column '{}' listed twice", c.name)));
            }
            match &c.role {
                ColumnRole::Categorical { categories } if categories.is_empty() => {
                    return Err(Error::config(format!("column '{}' declares no categories", c.name)))
                }
                ColumnRole::Label { classes } if classes.len() < 2 => {
                    return Err(Error::config(format!(
                        "label column '{}' must declare at least two classes",
                        c.name
                    )))
                }
                _ => {}
            }
        }
        let labels = self
            .columns
            .iter()
            .filter(|c| matches!(c.role, ColumnRole::Label { .. }))
            .count();
        if labels != 1 {
            return Err(Error::config(format!(
                "schema needs exactly one label column, found {labels}"
            )));
        }
        Ok(())
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.columns
            .iter()
            .find_map(|c| match &c.role {
                ColumnRole::Label { classes } => Some(classes.len()),
                _ => None,
            })
            .unwrap_or(0)
    }

    /// Width of the encoded feature vector.
    pub fn n_features(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match &c.role {
                ColumnRole::Continuous => 1,
                ColumnRole::Categorical { categories } => categories.len(),
                ColumnRole::Label { .. } => 0,
            })
            .sum()
    }
}

/// A row that could not be encoded and was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub column: String,
    pub value: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub batch: LabeledBatch,
    pub rejects: Vec<RejectedRow>,
}

/// Reads a headed, comma-separated UTF-8 file and encodes it per `schema`.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    attributes: &[SensitiveAttributeSpec],
) -> Result<CsvLoad> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, attributes)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(
    reader: R,
    schema: &CsvSchema,
    attributes: &[SensitiveAttributeSpec],
) -> Result<CsvLoad> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    // schema must cover the header exactly
    let mut roles = Vec::with_capacity(header.len());
    for h in &header {
        let spec = schema
            .columns
            .iter()
            .find(|c| &c.name == h)
            .ok_or_else(|| Error::config(format!("column '{h}' is not described by the schema")))?;
        roles.push(&spec.role);
    }
    if let Some(missing) = schema.columns.iter().find(|c| !header.contains(&c.name)) {
        return Err(Error::config(format!(
            "schema column '{}' is missing from the file",
            missing.name
        )));
    }
    let n_features = schema.n_features();
    let n_classes = schema.n_classes();
    for a in attributes {
        a.predicate.check(n_features, n_classes, Some(&header))?;
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut kept = Vec::new();
    let mut rejects = Vec::new();
    let mut row = Vec::with_capacity(n_features);
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = r as u64 + 2;
        row.clear();
        let mut label = None;
        let mut reject = None;
        for ((cell, role), name) in record.iter().zip(&roles).zip(&header) {
            let cell = cell.trim();
            match role {
                ColumnRole::Continuous => match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => row.push(v),
                    _ => {
                        reject = Some((name, cell, "non-numeric value in continuous column"));
                        break;
                    }
                },
                ColumnRole::Categorical { categories } => {
                    match categories.iter().position(|c| c == cell) {
                        Some(idx) => row.extend((0..categories.len()).map(|j| f64::from(u8::from(j == idx)))),
                        None => {
                            reject = Some((name, cell, "unknown category"));
                            break;
                        }
                    }
                }
                ColumnRole::Label { classes } => match classes.iter().position(|c| c == cell) {
                    Some(idx) => label = Some(idx),
                    None => {
                        reject = Some((name, cell, "unknown label"));
                        break;
                    }
                },
            }
        }
        if reject.is_none() && record.len() != header.len() {
            reject = Some((&header[0], "", "wrong number of fields"));
        }
        match (reject, label) {
            (Some((column, value, reason)), _) => rejects.push(RejectedRow {
                line,
                column: column.clone(),
                value: value.to_string(),
                reason: reason.to_string(),
            }),
            (None, Some(y)) => {
                features.extend_from_slice(&row);
                labels.push(y);
                kept.push(record);
            }
            (None, None) => unreachable!("schema has exactly one label column"),
        }
    }

    // continuous columns are normalised; one-hot columns are already 0/1
    let continuous: Vec<usize> = {
        let mut offset = 0;
        let mut out = Vec::new();
        for role in &roles {
            match role {
                ColumnRole::Continuous => {
                    out.push(offset);
                    offset += 1;
                }
                ColumnRole::Categorical { categories } => offset += categories.len(),
                ColumnRole::Label { .. } => {}
            }
        }
        out
    };
    normalise_selected(&mut features, n_features, &continuous);

    let mut flags = Vec::with_capacity(labels.len() * attributes.len());
    for (i, record) in kept.iter().enumerate() {
        let view = SampleView {
            label: labels[i],
            features: &features[i * n_features..(i + 1) * n_features],
            raw: Some(RawRow {
                header: &header,
                record,
            }),
        };
        tag(attributes, &view, &mut flags);
    }
    let batch = LabeledBatch::new(features, n_features, labels, n_classes, flags, attributes.len())?;
    Ok(CsvLoad { batch, rejects })
}

fn normalise_selected(values: &mut [f64], width: usize, columns: &[usize]) {
    if values.is_empty() || columns.is_empty() {
        return;
    }
    let rows = values.len() / width;
    let mut column = vec![0.0; rows];
    for &j in columns {
        for (i, c) in column.iter_mut().enumerate() {
            *c = values[i * width + j];
        }
        min_max_columns(&mut column, 1);
        for (i, c) in column.iter().enumerate() {
            values[i * width + j] = *c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::AttributeRule;

    fn schema() -> CsvSchema {
        toml::from_str(
            r#"
            columns = [
              { name = "size", role = "continuous" },
              { name = "proto", role = "categorical", categories = ["tcp", "udp"] },
              { name = "label", role = "label", classes = ["normal", "attack"] },
            ]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn one_hot_widens_features() {
        let text = "size,proto,label\n1,tcp,normal\n3,udp,attack\n2,tcp,attack\n";
        let out = read_csv(text.as_bytes(), &schema(), &[]).unwrap();
        assert_eq!(out.batch.n_features(), 3);
        assert_eq!(out.batch.len(), 3);
        assert_eq!(out.batch.row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(out.batch.row(1), &[1.0, 0.0, 1.0]);
        assert_eq!(out.batch.row(2), &[0.5, 1.0, 0.0]);
        assert_eq!(out.batch.labels(), &[0, 1, 1]);
        assert!(out.rejects.is_empty());
    }

    #[test]
    fn constant_column_normalises_to_zero() {
        let text = "size,proto,label\n7,tcp,normal\n7,udp,attack\n7,tcp,attack\n";
        let out = read_csv(text.as_bytes(), &schema(), &[]).unwrap();
        assert!((0..3).all(|i| out.batch.row(i)[0] == 0.0));
    }

    #[test]
    fn bad_rows_are_reported_and_skipped() {
        let text = "size,proto,label\n1,tcp,normal\nx,udp,attack\n2,icmp,attack\n4,udp,maybe\n5,udp,attack\n";
        let out = read_csv(text.as_bytes(), &schema(), &[]).unwrap();
        assert_eq!(out.batch.len(), 2);
        let lines: Vec<u64> = out.rejects.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![3, 4, 5]);
        assert_eq!(out.rejects[0].reason, "non-numeric value in continuous column");
        assert_eq!(out.rejects[1].reason, "unknown category");
        assert_eq!(out.rejects[1].value, "icmp");
        assert_eq!(out.rejects[2].reason, "unknown label");
    }

    #[test]
    fn schema_must_cover_header() {
        let text = "size,proto,label,extra\n1,tcp,normal,0\n";
        assert!(read_csv(text.as_bytes(), &schema(), &[]).is_err());
        let text = "size,label\n1,normal\n";
        assert!(read_csv(text.as_bytes(), &schema(), &[]).is_err());
    }

    #[test]
    fn raw_column_attribute() {
        let text = "size,proto,label\n1,tcp,normal\n3,udp,attack\n";
        let attrs = [SensitiveAttributeSpec {
            name: "udp".into(),
            predicate: AttributeRule::ColumnEquals {
                column: "proto".into(),
                value: "udp".into(),
            },
        }];
        let out = read_csv(text.as_bytes(), &schema(), &attrs).unwrap();
        assert_eq!(out.batch.attribute_column(0), vec![0, 1]);
    }

    #[test]
    fn schema_needs_one_label() {
        let s = CsvSchema {
            columns: vec![ColumnSpec {
                name: "a".into(),
                role: ColumnRole::Continuous,
            }],
        };
        assert!(s.validate().is_err());
    }
}
