use crate::error::{Error, Result};

/// Labelled samples with per-sample sensitive-attribute membership flags.
///
/// Features are stored row-major and always lie in `[0, 1]`. Every sample
/// carries an `id` naming its row in the dataset it was drawn from, so shards
/// produced by partitioning can be checked for overlap and loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    n_classes: usize,
    attributes: Vec<u8>,
    n_attributes: usize,
    ids: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        n_classes: usize,
        attributes: Vec<u8>,
        n_attributes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        let ids = (0..n).collect();
        Self::with_ids(
            features,
            n_features,
            labels,
            n_classes,
            attributes,
            n_attributes,
            ids,
        )
    }

    pub fn with_ids(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        n_classes: usize,
        attributes: Vec<u8>,
        n_attributes: usize,
        ids: Vec<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        if n_features == 0 {
            return Err(Error::config("a batch needs at least one feature"));
        }
        if n_classes < 2 {
            return Err(Error::config("a batch needs at least two classes"));
        }
        if features.len() != n * n_features {
            return Err(Error::config(format!(
                "feature matrix has {} values, expected {} x {}",
                features.len(),
                n,
                n_features
            )));
        }
        if attributes.len() != n * n_attributes {
            return Err(Error::config(format!(
                "attribute matrix has {} values, expected {} x {}",
                attributes.len(),
                n,
                n_attributes
            )));
        }
        if ids.len() != n {
            return Err(Error::config("one id per sample is required"));
        }
        if let Some(pos) = features.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config(format!(
                "feature value {} at sample {} lies outside [0, 1]",
                features[pos],
                pos / n_features
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::config(format!(
                "label {bad} is not below the class count {n_classes}"
            )));
        }
        if attributes.iter().any(|&a| a > 1) {
            return Err(Error::config("attribute flags must be 0 or 1"));
        }
        Ok(Self {
            features,
            n_features,
            labels,
            n_classes,
            attributes,
            n_attributes,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_attributes(&self) -> usize {
        self.n_attributes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Membership of sample `i` in the group flagged by attribute `a`.
    pub fn attribute(&self, i: usize, a: usize) -> bool {
        self.attributes[i * self.n_attributes + a] == 1
    }

    pub fn attribute_column(&self, a: usize) -> Vec<u8> {
        (0..self.len())
            .map(|i| self.attributes[i * self.n_attributes + a])
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// New batch holding the rows at `positions`, in that order.
    pub fn select(&self, positions: &[usize]) -> LabeledBatch {
        let mut features = Vec::with_capacity(positions.len() * self.n_features);
        let mut attributes = Vec::with_capacity(positions.len() * self.n_attributes);
        let mut labels = Vec::with_capacity(positions.len());
        let mut ids = Vec::with_capacity(positions.len());
        for &p in positions {
            features.extend_from_slice(self.row(p));
            attributes.extend_from_slice(
                &self.attributes[p * self.n_attributes..(p + 1) * self.n_attributes],
            );
            labels.push(self.labels[p]);
            ids.push(self.ids[p]);
        }
        LabeledBatch {
            features,
            n_features: self.n_features,
            labels,
            n_classes: self.n_classes,
            attributes,
            n_attributes: self.n_attributes,
            ids,
        }
    }

    /// The batch with every sample repeated `times` times (used in tests of
    /// mean-based losses).
    pub fn repeated(&self, times: usize) -> LabeledBatch {
        let positions: Vec<usize> = (0..times).flat_map(|_| 0..self.len()).collect();
        self.select(&positions)
    }

    /// Same samples with `labels` swapped in, e.g. to inject label noise.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<LabeledBatch> {
        Self::with_ids(
            self.features.clone(),
            self.n_features,
            labels,
            self.n_classes,
            self.attributes.clone(),
            self.n_attributes,
            self.ids.clone(),
        )
    }
}
