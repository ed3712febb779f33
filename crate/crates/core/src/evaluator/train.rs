//! Minibatch SGD with momentum for the built-in perceptron models, including factored layers.
//!
//! Factored layers keep their topology: `U'` and `V*` are trained as two separate matrices.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_chain, evaluate, Dataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::netmodel::CompressedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    32
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self { epochs, learning_rate: default_lr(), momentum: default_momentum(), batch_size: default_batch(), seed }
    }
}

/// Outcome of [`retrain`]: the tuned model plus its training-split error before and after each epoch.
#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub model: CompressedModel,
    pub initial_error: f64,
    pub history: Vec<f64>,
}

/// Fine-tunes every matrix of `model` on `train`.
///
/// Fails with [`Error::Divergence`] if the training error exceeds twice its initial value
/// (floored at one point) for three consecutive epochs.
pub fn retrain(model: &CompressedModel, train: &Dataset, config: &TrainConfig) -> Result<RetrainOutcome> {
    let initial_error = evaluate(model, train, false)?.error;
    let mut model = model.clone();
    let limit = 2.0 * initial_error.max(1.0);
    let mut trainer = Trainer::new(&model, config)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut strikes = 0;
    for _ in 0..config.epochs {
        trainer.epoch(&mut model, train)?;
        let err = evaluate(&model, train, false)?.error;
        history.push(err);
        strikes = if err > limit { strikes + 1 } else { 0 };
        if strikes >= 3 {
            return Err(Error::Divergence { history });
        }
    }
    Ok(RetrainOutcome { model, initial_error, history })
}

/// Holds momentum buffers and the shuffling RNG across epochs.
pub struct Trainer {
    config: TrainConfig,
    velocity: Vec<Vec<Matrix>>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: &CompressedModel, config: &TrainConfig) -> Result<Self> {
        check_chain(model)?;
        if config.batch_size == 0 {
            return Err(Error::ContractViolation("batch size must be positive".into()));
        }
        let velocity = model
            .layers
            .iter()
            .map(|l| l.factors().iter().map(|f| Matrix::zeros(f.rows(), f.cols())).collect())
            .collect();
        Ok(Self { config: config.clone(), velocity, rng: ChaCha8Rng::seed_from_u64(config.seed) })
    }

    /// One pass over `data` in shuffled minibatches; returns the mean cross-entropy.
    pub fn epoch(&mut self, model: &mut CompressedModel, data: &Dataset) -> Result<f64> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total_loss = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch = data.select(chunk, data.split);
            let (loss, grads) = loss_and_gradients(model, &batch.features, &batch.labels)?;
            total_loss += loss * chunk.len() as f64;
            self.apply(model, &grads)?;
        }
        Ok(total_loss / data.len().max(1) as f64)
    }

    fn apply(&mut self, model: &mut CompressedModel, grads: &[Vec<Matrix>]) -> Result<()> {
        let (lr, mu) = (self.config.learning_rate, self.config.momentum);
        for ((layer, layer_grads), layer_vel) in model.layers.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, g), v) in layer.factors_mut().into_iter().zip(layer_grads).zip(layer_vel) {
                for ((wi, &gi), vi) in w.as_mut_slice().iter_mut().zip(g.as_slice()).zip(v.as_mut_slice()) {
                    *vi = mu * *vi - lr * gi;
                    *wi += *vi;
                }
                if !w.is_finite() {
                    return Err(Error::Numerical("non-finite weights during training".into()));
                }
            }
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy of a batch and its gradient for every factor of every layer.
pub fn loss_and_gradients(model: &CompressedModel, x: &Matrix, labels: &[usize]) -> Result<(f64, Vec<Vec<Matrix>>)> {
    check_chain(model)?;
    let last = model.layers.len() - 1;
    let batch = x.rows() as f64;

    // Input to every factor, plus post-activation output of every non-final layer.
    let mut factor_inputs: Vec<Vec<Matrix>> = Vec::with_capacity(model.layers.len());
    let mut activations: Vec<Matrix> = Vec::with_capacity(model.layers.len());
    let mut h = x.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        let mut inputs = Vec::new();
        for f in layer.factors() {
            inputs.push(h.clone());
            h = h.matmul(f);
        }
        factor_inputs.push(inputs);
        if i != last {
            h.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
            activations.push(h.clone());
        }
    }

    let classes = h.cols();
    let mut loss = 0.0;
    let mut delta = Matrix::zeros(h.rows(), classes);
    for (r, &label) in labels.iter().enumerate() {
        let row = h.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss -= row[label] - max - sum.ln();
        for (j, d) in delta.row_mut(r).iter_mut().enumerate() {
            let p = (row[j] - max).exp() / sum;
            *d = (p - if j == label { 1.0 } else { 0.0 }) / batch;
        }
    }

    let mut grads: Vec<Vec<Matrix>> = model.layers.iter().map(|_| Vec::new()).collect();
    for i in (0..model.layers.len()).rev() {
        if i != last {
            let a = &activations[i];
            for (d, &av) in delta.as_mut_slice().iter_mut().zip(a.as_slice()) {
                *d *= 1.0 - av * av;
            }
        }
        let factors = model.layers[i].factors();
        let mut layer_grads = vec![Matrix::zeros(0, 0); factors.len()];
        for k in (0..factors.len()).rev() {
            layer_grads[k] = factor_inputs[i][k].t_matmul(&delta);
            if i > 0 || k > 0 {
                delta = delta.matmul_t(factors[k]);
            }
        }
        grads[i] = layer_grads;
    }
    Ok((loss / batch, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::Split;
    use crate::lowrank::TruncatedPair;
    use crate::netmodel::CompressedLayer;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-0.7..0.7))
    }

    fn small_model(rng: &mut ChaCha8Rng) -> CompressedModel {
        CompressedModel {
            layers: vec![
                CompressedLayer::Dense { name: "a".into(), weights: random(4, 5, rng), searchable: true },
                CompressedLayer::Factored {
                    name: "b".into(),
                    pair: TruncatedPair { u_trunc: random(5, 2, rng), v_star: random(2, 3, rng) },
                    searchable: true,
                },
            ],
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = small_model(&mut rng);
        let x = random(6, 4, &mut rng);
        let labels = vec![0, 1, 2, 0, 1, 2];
        let (_, grads) = loss_and_gradients(&model, &x, &labels).unwrap();
        let h = 1e-6;
        for li in 0..model.layers.len() {
            for fi in 0..model.layers[li].factors().len() {
                for e in 0..grads[li][fi].len() {
                    let orig = model.layers[li].factors()[fi].as_slice()[e];
                    model.layers[li].factors_mut()[fi].as_mut_slice()[e] = orig + h;
                    let up = loss_and_gradients(&model, &x, &labels).unwrap().0;
                    model.layers[li].factors_mut()[fi].as_mut_slice()[e] = orig - h;
                    let down = loss_and_gradients(&model, &x, &labels).unwrap().0;
                    model.layers[li].factors_mut()[fi].as_mut_slice()[e] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = grads[li][fi].as_slice()[e];
                    assert!((numeric - analytic).abs() < 1e-7, "layer {li} factor {fi} entry {e}: {analytic} vs {numeric}");
                }
            }
        }
    }

    #[test]
    fn zero_epochs_is_identity_and_topology_is_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = small_model(&mut rng);
        let x = random(40, 4, &mut rng);
        let labels = (0..40).map(|i| i % 3).collect();
        let data = Dataset::new(Split::Train, (0..40).collect(), x, labels, vec![1; 40]).unwrap();
        let out = retrain(&model, &data, &TrainConfig::new(0, 1)).unwrap();
        assert_eq!(out.model, model);
        let out = retrain(&model, &data, &TrainConfig::new(3, 1)).unwrap();
        assert_eq!(out.model.param_count(), model.param_count());
        assert_eq!(out.history.len(), 3);
        assert!(matches!(out.model.layers[1], CompressedLayer::Factored { .. }));
    }

    #[test]
    fn divergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = small_model(&mut rng);
        let teacher = random(4, 3, &mut rng);
        let x = random(90, 4, &mut rng);
        let labels: Vec<usize> = (0..90)
            .map(|i| {
                let s = teacher.vecmul(x.row(i));
                (0..3).max_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap()).unwrap()
            })
            .collect();
        let data = Dataset::new(Split::Train, (0..90).collect(), x, labels, vec![1; 90]).unwrap();
        let fitted = retrain(&model, &data, &TrainConfig { epochs: 150, learning_rate: 0.05, ..TrainConfig::new(0, 1) }).unwrap();
        assert!(fitted.history.last().unwrap() < &20.0, "warm-up fit failed: {:?}", fitted.history.last());
        let wild = TrainConfig { epochs: 20, learning_rate: 1e4, momentum: 0.9, batch_size: 4, seed: 0 };
        match retrain(&fitted.model, &data, &wild) {
            Err(Error::Divergence { history }) => assert_eq!(history.len(), 3),
            Err(Error::Numerical(_)) => {}
            other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
        }
    }
}
