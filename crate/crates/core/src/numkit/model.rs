use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::batch::LabeledBatch;
use super::rng::RngStream;
use crate::error::{Error, Result};

/// Width of the MLP's single hidden layer.
pub const MLP_HIDDEN_UNITS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Multinomial logistic regression.
    Logistic,
    /// One ReLU hidden layer of [`MLP_HIDDEN_UNITS`] units.
    Mlp,
}

/// A dense layer: a `rows x cols` weight matrix (inputs x outputs, row-major)
/// followed by `cols` bias terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector plus the layer layout it encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    values: Vec<f64>,
    shapes: Vec<LayerShape>,
    kind: ModelKind,
}

fn layout(kind: ModelKind, n_features: usize, n_classes: usize) -> Vec<LayerShape> {
    match kind {
        ModelKind::Logistic => vec![LayerShape {
            rows: n_features,
            cols: n_classes,
        }],
        ModelKind::Mlp => vec![
            LayerShape {
                rows: n_features,
                cols: MLP_HIDDEN_UNITS,
            },
            LayerShape {
                rows: MLP_HIDDEN_UNITS,
                cols: n_classes,
            },
        ],
    }
}

impl ModelParams {
    pub fn zeros(kind: ModelKind, n_features: usize, n_classes: usize) -> Self {
        let shapes = layout(kind, n_features, n_classes);
        let len = shapes.iter().map(LayerShape::len).sum();
        Self {
            values: vec![0.0; len],
            shapes,
            kind,
        }
    }

    /// Random initialisation: He-normal weights for the hidden layer, small
    /// Gaussian weights elsewhere, zero biases.
    pub fn init(kind: ModelKind, n_features: usize, n_classes: usize, rng: &mut RngStream) -> Self {
        let mut params = Self::zeros(kind, n_features, n_classes);
        let mut offset = 0;
        let last = params.shapes.len() - 1;
        for (l, shape) in params.shapes.clone().iter().enumerate() {
            let std = match (kind, l == last) {
                (ModelKind::Logistic, _) => 0.01,
                (ModelKind::Mlp, false) => (2.0 / shape.rows as f64).sqrt(),
                (ModelKind::Mlp, true) => (1.0 / shape.rows as f64).sqrt(),
            };
            let normal = Normal::new(0.0, std).expect("finite std");
            for w in &mut params.values[offset..offset + shape.rows * shape.cols] {
                *w = normal.sample(rng);
            }
            offset += shape.len();
        }
        params
    }

    pub fn from_parts(kind: ModelKind, shapes: Vec<LayerShape>, values: Vec<f64>) -> Result<Self> {
        let expected_layers = match kind {
            ModelKind::Logistic => 1,
            ModelKind::Mlp => 2,
        };
        if shapes.len() != expected_layers {
            return Err(Error::config(format!(
                "{kind:?} models have {expected_layers} layer(s), got {}",
                shapes.len()
            )));
        }
        if shapes.windows(2).any(|w| w[0].cols != w[1].rows) {
            return Err(Error::config("consecutive layer shapes do not chain"));
        }
        let len: usize = shapes.iter().map(LayerShape::len).sum();
        if values.len() != len {
            return Err(Error::config(format!(
                "parameter vector has {} values, layout needs {len}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            shapes,
            kind,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.shapes[0].rows
    }

    pub fn n_classes(&self) -> usize {
        self.shapes[self.shapes.len() - 1].cols
    }

    pub fn is_compatible(&self, other: &ModelParams) -> bool {
        self.kind == other.kind && self.shapes == other.shapes
    }

    pub fn check_compatible(&self, other: &ModelParams) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::protocol(format!(
                "incompatible parameters: {:?}{:?} vs {:?}{:?}",
                self.kind, self.shapes, other.kind, other.shapes
            )))
        }
    }

    fn check_data(&self, data: &LabeledBatch) -> Result<()> {
        if data.n_features() != self.n_features() || data.n_classes() != self.n_classes() {
            return Err(Error::config(format!(
                "model expects {} features / {} classes, data has {} / {}",
                self.n_features(),
                self.n_classes(),
                data.n_features(),
                data.n_classes()
            )));
        }
        Ok(())
    }

    /// Unweighted mean of compatible parameter sets.
    pub fn average(models: &[&ModelParams]) -> Result<ModelParams> {
        let n = models.len();
        let weights = vec![1.0 / n as f64; n];
        Self::weighted_average(models, &weights)
    }

    /// Convex combination `sum_i w_i * models[i]`, with `weights` summing to one.
    ///
    /// Evaluated as `m_0 + sum_i w_i (m_i - m_0)` and clamped per coordinate to
    /// the range spanned by the inputs, so identical inputs come back bit-exact
    /// and no coordinate leaves the convex hull through rounding.
    pub fn weighted_average(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
        let (first, rest) = models
            .split_first()
            .ok_or_else(|| Error::config("cannot average zero models"))?;
        if weights.len() != models.len() {
            return Err(Error::config("one weight per model is required"));
        }
        for m in rest {
            first.check_compatible(m)?;
        }
        let mut out = (*first).clone();
        for (j, slot) in out.values.iter_mut().enumerate() {
            let base = first.values[j];
            let (mut lo, mut hi) = (base, base);
            let mut shift = 0.0;
            for (m, &w) in models.iter().zip(weights).skip(1) {
                let v = m.values[j];
                lo = lo.min(v);
                hi = hi.max(v);
                shift += w * (v - base);
            }
            *slot = (base + shift).clamp(lo, hi);
        }
        Ok(out)
    }

    /// `self - other`, coordinate-wise.
    pub fn difference(&self, other: &ModelParams) -> Result<Vec<f64>> {
        self.check_compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect())
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn workspace(&self) -> Workspace {
        let hidden = if self.kind == ModelKind::Mlp {
            self.shapes[0].cols
        } else {
            0
        };
        Workspace {
            hidden_pre: vec![0.0; hidden],
            hidden: vec![0.0; hidden],
            dhidden: vec![0.0; hidden],
            logits: vec![0.0; self.n_classes()],
        }
    }

    fn forward(&self, x: &[f64], ws: &mut Workspace) {
        match self.kind {
            ModelKind::Logistic => dense(&self.values, self.shapes[0], x, &mut ws.logits),
            ModelKind::Mlp => {
                let first = self.shapes[0];
                dense(&self.values, first, x, &mut ws.hidden_pre);
                for (h, &z) in ws.hidden.iter_mut().zip(&ws.hidden_pre) {
                    *h = z.max(0.0);
                }
                dense(
                    &self.values[first.len()..],
                    self.shapes[1],
                    &ws.hidden,
                    &mut ws.logits,
                );
            }
        }
    }

    /// Predicted class; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut ws = self.workspace();
        self.forward(x, &mut ws);
        argmax(&ws.logits)
    }

    /// Softmax probabilities for one sample.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = self.workspace();
        self.forward(x, &mut ws);
        let lse = log_sum_exp(&ws.logits);
        ws.logits.iter().map(|z| (z - lse).exp()).collect()
    }

    /// Mean cross-entropy over `data`.
    pub fn loss(&self, data: &LabeledBatch) -> Result<f64> {
        self.check_data(data)?;
        if data.is_empty() {
            return Err(Error::config("loss of an empty batch is undefined"));
        }
        let mut ws = self.workspace();
        let total: f64 = (0..data.len())
            .map(|i| {
                self.forward(data.row(i), &mut ws);
                log_sum_exp(&ws.logits) - ws.logits[data.label(i)]
            })
            .sum();
        Ok(total / data.len() as f64)
    }

    /// Adds the summed cross-entropy gradient of the samples at `positions`
    /// into `grad` and returns the summed loss.
    fn accumulate_gradient(
        &self,
        data: &LabeledBatch,
        positions: &[usize],
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        let mut loss = 0.0;
        for &i in positions {
            let x = data.row(i);
            let y = data.label(i);
            self.forward(x, ws);
            let lse = log_sum_exp(&ws.logits);
            loss += lse - ws.logits[y];
            for (c, z) in ws.logits.iter_mut().enumerate() {
                *z = (*z - lse).exp() - if c == y { 1.0 } else { 0.0 };
            }
            match self.kind {
                ModelKind::Logistic => dense_backward(grad, self.shapes[0], x, &ws.logits),
                ModelKind::Mlp => {
                    let first = self.shapes[0];
                    let second = self.shapes[1];
                    let (g1, g2) = grad.split_at_mut(first.len());
                    dense_backward(g2, second, &ws.hidden, &ws.logits);
                    let w2 = &self.values[first.len()..first.len() + second.rows * second.cols];
                    for j in 0..second.rows {
                        let dh: f64 = (0..second.cols)
                            .map(|c| w2[j * second.cols + c] * ws.logits[c])
                            .sum();
                        ws.dhidden[j] = if ws.hidden_pre[j] > 0.0 { dh } else { 0.0 };
                    }
                    dense_backward(g1, first, x, &ws.dhidden);
                }
            }
        }
        loss
    }

    /// Analytic gradient of the mean cross-entropy over `data`.
    pub fn gradient(&self, data: &LabeledBatch) -> Result<Vec<f64>> {
        self.check_data(data)?;
        if data.is_empty() {
            return Err(Error::config("gradient of an empty batch is undefined"));
        }
        let mut grad = vec![0.0; self.values.len()];
        let positions: Vec<usize> = (0..data.len()).collect();
        let mut ws = self.workspace();
        self.accumulate_gradient(data, &positions, &mut grad, &mut ws);
        let scale = 1.0 / data.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok(grad)
    }
}

struct Workspace {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    dhidden: Vec<f64>,
    logits: Vec<f64>,
}

fn dense(params: &[f64], shape: LayerShape, x: &[f64], out: &mut [f64]) {
    let weights = &params[..shape.rows * shape.cols];
    let bias = &params[shape.rows * shape.cols..shape.len()];
    out.copy_from_slice(bias);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &weights[i * shape.cols..(i + 1) * shape.cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
}

fn dense_backward(grad: &mut [f64], shape: LayerShape, x: &[f64], delta: &[f64]) {
    let (gw, gb) = grad[..shape.len()].split_at_mut(shape.rows * shape.cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &mut gw[i * shape.cols..(i + 1) * shape.cols];
        for (g, &d) in row.iter_mut().zip(delta) {
            *g += xi * d;
        }
    }
    for (g, &d) in gb.iter_mut().zip(delta) {
        *g += d;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = c;
        }
    }
    best
}

/// Mini-batch SGD settings for local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl SgdConfig {
    pub const DEFAULT_BATCH_SIZE: usize = 32;

    pub fn new(epochs: usize, lr: f64) -> Self {
        Self {
            epochs,
            lr,
            batch_size: Self::DEFAULT_BATCH_SIZE,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("local training needs at least one epoch"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// `epochs` full passes of shuffled mini-batch SGD over `data`, starting from
/// `params`. The final partial batch of each epoch is kept.
pub fn train_local(
    params: &ModelParams,
    data: &LabeledBatch,
    cfg: &SgdConfig,
    rng: &mut RngStream,
) -> Result<ModelParams> {
    sgd(params, data, cfg, None, rng)
}

/// Like [`train_local`] but minimising `loss + lambda/2 * ||v - anchor||^2`.
///
/// The quadratic term is applied as an exact proximal step after each gradient
/// step, `v <- (v - lr*g + lr*lambda*anchor) / (1 + lr*lambda)`, which stays
/// stable for any `lambda` and is identical to plain SGD at `lambda = 0`.
pub fn train_regularized(
    params: &ModelParams,
    anchor: &ModelParams,
    lambda: f64,
    data: &LabeledBatch,
    cfg: &SgdConfig,
    rng: &mut RngStream,
) -> Result<ModelParams> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::config(format!(
            "regularisation strength must be finite and non-negative, got {lambda}"
        )));
    }
    params.check_compatible(anchor)?;
    if lambda == 0.0 {
        return sgd(params, data, cfg, None, rng);
    }
    sgd(params, data, cfg, Some((anchor, lambda)), rng)
}

fn sgd(
    params: &ModelParams,
    data: &LabeledBatch,
    cfg: &SgdConfig,
    prox: Option<(&ModelParams, f64)>,
    rng: &mut RngStream,
) -> Result<ModelParams> {
    cfg.validate()?;
    params.check_data(data)?;
    if data.is_empty() {
        return Err(Error::config("cannot train on an empty batch"));
    }
    let mut model = params.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.values.len()];
    let mut ws = model.workspace();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            model.accumulate_gradient(data, chunk, &mut grad, &mut ws);
            let step = cfg.lr / chunk.len() as f64;
            match prox {
                None => {
                    for (v, g) in model.values.iter_mut().zip(&grad) {
                        *v -= step * g;
                    }
                }
                Some((anchor, lambda)) => {
                    let pull = cfg.lr * lambda;
                    let denom = 1.0 + pull;
                    for ((v, g), a) in model.values.iter_mut().zip(&grad).zip(&anchor.values) {
                        *v = (*v - step * g + pull * a) / denom;
                    }
                }
            }
        }
    }
    Ok(model)
}

/// True/false positive/negative counts for one group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl GroupCounts {
    pub fn record(&mut self, predicted_positive: bool, actually_positive: bool) {
        match (predicted_positive, actually_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }
}

/// Confusion counts for the samples outside (`a = 0`) and inside (`a = 1`)
/// one sensitive attribute's group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeConfusion {
    pub outside: GroupCounts,
    pub inside: GroupCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub loss: f64,
    pub samples: usize,
    /// One entry per sensitive attribute, with positives defined by the
    /// evaluation's positive class.
    pub confusion: Vec<AttributeConfusion>,
}

/// Accuracy, mean cross-entropy and per-attribute confusion counts of
/// `params` on `data`. `positive_class` defines `Y = 1` and `Ŷ = 1`.
pub fn evaluate(params: &ModelParams, data: &LabeledBatch, positive_class: usize) -> Result<EvalReport> {
    params.check_data(data)?;
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty batch"));
    }
    if positive_class >= data.n_classes() {
        return Err(Error::config(format!(
            "positive class {positive_class} is not a class of a {}-class task",
            data.n_classes()
        )));
    }
    let mut ws = params.workspace();
    let mut correct = 0usize;
    let mut loss = 0.0;
    let mut confusion = vec![AttributeConfusion::default(); data.n_attributes()];
    for i in 0..data.len() {
        params.forward(data.row(i), &mut ws);
        let y = data.label(i);
        let y_hat = argmax(&ws.logits);
        loss += log_sum_exp(&ws.logits) - ws.logits[y];
        if y_hat == y {
            correct += 1;
        }
        for (a, counts) in confusion.iter_mut().enumerate() {
            let group = if data.attribute(i, a) {
                &mut counts.inside
            } else {
                &mut counts.outside
            };
            group.record(y_hat == positive_class, y == positive_class);
        }
    }
    let n = data.len() as f64;
    Ok(EvalReport {
        accuracy: correct as f64 / n,
        loss: loss / n,
        samples: data.len(),
        confusion,
    })
}
