//! Error-rate evaluation of (possibly compressed) layered models.
//!
//! Built-in models are plain multilayer perceptrons: each layer maps a row vector through its
//! weight matrix (or through `U'` then `V*` when factored), with `tanh` between layers and an
//! argmax readout. Errors are percentages on a 0-100 scale.

pub mod external;
pub mod toy;
pub mod train;

use serde::{Deserialize, Serialize};


use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::netmodel::{CompressedModel, LayeredModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Condensed,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Condensed => "condensed",
            Split::Test => "test",
        }
    }
}

/// Samples stored column-wise: one feature row, label, token length and stable id per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub ids: Vec<usize>,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl Dataset {
    pub fn new(split: Split, ids: Vec<usize>, features: Matrix, labels: Vec<usize>, lengths: Vec<usize>) -> Result<Self> {
        let n = features.rows();
        if ids.len() != n || labels.len() != n || lengths.len() != n {
            return Err(Error::ModelShape("dataset columns have different lengths".into()));
        }
        Ok(Self { split, ids, features, labels, lengths })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Samples at the given positions, in the given order.
    pub fn select(&self, positions: &[usize], split: Split) -> Dataset {
        let dim = self.features.cols();
        let mut data = Vec::with_capacity(positions.len() * dim);
        for &p in positions {
            data.extend_from_slice(self.features.row(p));
        }
        Dataset {
            split,
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
            features: Matrix::from_vec(positions.len(), dim, data),
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            lengths: positions.iter().map(|&p| self.lengths[p]).collect(),
        }
    }

    /// Samples whose ids appear in `ids`, in dataset order.
    pub fn subset_by_ids(&self, ids: &[usize], split: Split) -> Result<Dataset> {
        let wanted: std::collections::HashSet<usize> = ids.iter().copied().collect();
        let positions: Vec<usize> = (0..self.len()).filter(|&p| wanted.contains(&self.ids[p])).collect();
        if positions.len() != wanted.len() {
            return Err(Error::UnknownLayer(format!("{} sample ids not present in the {} split", wanted.len() - positions.len(), self.split.as_str())));
        }
        Ok(self.select(&positions, split))
    }

    /// Length-weighted mean of per-sample errors.
    pub fn aggregate(&self, per_sample: &[f64]) -> f64 {
        aggregate_errors(per_sample, &self.lengths)
    }
}

pub fn aggregate_errors(per_sample: &[f64], lengths: &[usize]) -> f64 {
    let total: usize = lengths.iter().sum();
    if total == 0 {
        return 0.0;
    }
    per_sample.iter().zip(lengths).map(|(e, &l)| e * l as f64).sum::<f64>() / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub error: f64,
    pub per_sample: Option<Vec<f64>>,
    pub wall_ms: u64,
}

/// Anything that can score a compressed model.
pub trait Evaluator {
    fn evaluate(&self, model: &CompressedModel, with_per_sample: bool) -> Result<EvalResult>;
}

impl Evaluator for Dataset {
    fn evaluate(&self, model: &CompressedModel, with_per_sample: bool) -> Result<EvalResult> {
        evaluate(model, self, with_per_sample)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, model: &CompressedModel, with_per_sample: bool) -> Result<EvalResult> {
        (**self).evaluate(model, with_per_sample)
    }
}

/// Validates that consecutive layers chain and returns (input_dim, output_dim).
pub fn check_chain(model: &CompressedModel) -> Result<(usize, usize)> {
    let mut dims: Option<(usize, usize)> = None;
    for layer in &model.layers {
        let (m, n) = layer.shape();
        if let Some((first, prev)) = dims {
            if prev != m {
                return Err(Error::ModelShape(format!("layer `{}` expects {m} inputs but receives {prev}", layer.name())));
            }
            dims = Some((first, n));
        } else {
            dims = Some((m, n));
        }
    }
    dims.ok_or_else(|| Error::ModelShape("model has no layers".into()))
}

/// Output logits for every sample (rows).
pub fn forward_logits(model: &CompressedModel, inputs: &Matrix) -> Result<Matrix> {
    let (input_dim, _) = check_chain(model)?;
    if inputs.cols() != input_dim {
        return Err(Error::ModelShape(format!("model expects {input_dim} features, data has {}", inputs.cols())));
    }
    let last = model.layers.len() - 1;
    let mut h = inputs.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        for factor in layer.factors() {
            h = h.matmul(factor);
        }
        if i != last {
            h.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        }
    }
    Ok(h)
}

pub fn predict(model: &CompressedModel, inputs: &Matrix) -> Result<Vec<usize>> {
    let logits = forward_logits(model, inputs)?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn evaluate(model: &CompressedModel, dataset: &Dataset, with_per_sample: bool) -> Result<EvalResult> {
    let watch = Stopwatch::start();
    let (_, classes) = check_chain(model)?;
    if let Some(&bad) = dataset.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::ModelShape(format!("label {bad} out of range for {classes} outputs")));
    }
    let predictions = predict(model, &dataset.features)?;
    let per_sample: Vec<f64> =
        predictions.iter().zip(&dataset.labels).map(|(p, l)| if p == l { 0.0 } else { 100.0 }).collect();
    let error = dataset.aggregate(&per_sample);
    Ok(EvalResult { error, per_sample: with_per_sample.then_some(per_sample), wall_ms: watch.elapsed_ms() })
}

pub fn evaluate_dense(model: &LayeredModel, dataset: &Dataset, with_per_sample: bool) -> Result<EvalResult> {
    evaluate(&CompressedModel::from(model), dataset, with_per_sample)
}

/// Wall-clock timer that reads zero on targets without a clock.
#[derive(Debug, Clone, Copy)]
pub struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    pub fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    pub fn elapsed_ms(&self) -> u64 {
        (self.elapsed_secs_f64() * 1000.0) as u64
    }

    pub fn elapsed_secs_f64(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}
