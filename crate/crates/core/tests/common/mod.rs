#![allow(dead_code)]

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankpilot::evaluator::{EvalResult, Evaluator};
use rankpilot::netmodel::{CompressedModel, LayerSpec, LayeredModel};
use rankpilot::{Error, Matrix, Result};

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// A chain of square searchable layers with random weights.
pub fn square_chain(layers: usize, width: usize, seed: u64) -> LayeredModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = (0..layers).map(|i| LayerSpec::new(format!("l{i}"), random_matrix(width, width, &mut rng), true)).collect();
    LayeredModel::new(specs, BTreeMap::new()).unwrap()
}

/// Looks the error up by the compressed model's per-layer ranks.
pub struct TableEvaluator {
    pub table: HashMap<Vec<usize>, f64>,
    pub calls: Cell<usize>,
}

impl TableEvaluator {
    pub fn new(table: HashMap<Vec<usize>, f64>) -> Self {
        Self { table, calls: Cell::new(0) }
    }

    /// Every combination of `options` rows, scored by `f`.
    pub fn from_fn(options: &[Vec<usize>], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let table = all_schemes(options).into_iter().map(|s| {
            let e = f(&s);
            (s, e)
        });
        Self::new(table.collect())
    }
}

impl Evaluator for TableEvaluator {
    fn evaluate(&self, model: &CompressedModel, _with_per_sample: bool) -> Result<EvalResult> {
        self.calls.set(self.calls.get() + 1);
        let ranks = model.searchable_ranks();
        let error = *self.table.get(&ranks).ok_or_else(|| Error::Protocol(format!("no table entry for {ranks:?}")))?;
        Ok(EvalResult { error, per_sample: None, wall_ms: 0 })
    }
}

/// Fails on the `fail_on`-th call (0-based), delegating otherwise.
pub struct FlakyEvaluator<'a> {
    pub inner: &'a dyn Evaluator,
    pub fail_on: usize,
    pub calls: Cell<usize>,
}

impl Evaluator for FlakyEvaluator<'_> {
    fn evaluate(&self, model: &CompressedModel, with_per_sample: bool) -> Result<EvalResult> {
        let call = self.calls.get();
        self.calls.set(call + 1);
        if call == self.fail_on {
            return Err(Error::EvalTimeout(1));
        }
        self.inner.evaluate(model, with_per_sample)
    }
}

pub fn all_schemes(options: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for row in options {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                row.iter().map(move |&k| {
                    let mut s = prefix.clone();
                    s.push(k);
                    s
                })
            })
            .collect();
    }
    out
}
