//! The demo operations as plain Rust, so they can be tested natively.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rankpilot::evaluator::{predict, Dataset, Evaluator, Split};
use rankpilot::lowrank::{is_economical, layer_speedup, rank_for_energy, svd, truncate};
use rankpilot::netmodel::{apply_scheme_with, scheme_speedup, CompressedModel, LayerSpec, LayeredModel, ModelFactors};
use rankpilot::reward::{RewardConfig, RewardMode};
use rankpilot::search::{run_search, SearchConfig};
use rankpilot::space::{build_space_with, manual_scheme_with};
use rankpilot::Matrix;
use serde::{Deserialize, Serialize};

pub const MAX_DIM: usize = 128;

/// `rows×cols` matrix whose singular values fall off like `exp(-decay·i/r)`.
pub fn decaying_matrix(rows: usize, cols: usize, decay: f64, rng: &mut impl Rng) -> Matrix {
    let r = rows.min(cols);
    let mut left = Matrix::from_fn(rows, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let right = Matrix::from_fn(r, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    for i in 0..rows {
        for (j, v) in left.row_mut(i).iter_mut().enumerate() {
            *v *= (-decay * j as f64 / r as f64).exp();
        }
    }
    left.matmul(&right)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationView {
    pub sigma: Vec<f64>,
    /// Fraction of the singular-value sum kept by the leading `k` values, for k = 1..=r.
    pub cumulative: Vec<f64>,
    pub rank: usize,
    /// False when factoring at `rank` would cost at least as much as the dense layer.
    pub economical: bool,
    pub speedup: f64,
    /// Relative Frobenius error of the rank-`rank` reconstruction.
    pub relative_error: f64,
    pub dense_params: usize,
    pub factored_params: usize,
}

/// Spectrum, chosen rank and the cost/accuracy of truncating a synthetic matrix at `energy`.
pub fn truncation_view(rows: usize, cols: usize, decay: f64, seed: u64, energy: f64) -> Result<TruncationView, String> {
    if !(1..=MAX_DIM).contains(&rows) || !(1..=MAX_DIM).contains(&cols) {
        return Err(format!("matrix dimensions must lie in 1..={MAX_DIM}"));
    }
    if !(decay.is_finite() && decay >= 0.0) {
        return Err("decay must be a non-negative number".into());
    }
    let m = decaying_matrix(rows, cols, decay, &mut ChaCha8Rng::seed_from_u64(seed));
    let f = svd(&m).map_err(|e| e.to_string())?;
    let rank = rank_for_energy(&f.sigma, energy).map_err(|e| e.to_string())?;
    let total: f64 = f.sigma.iter().sum();
    let cumulative = f
        .sigma
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s;
            Some(*acc / total)
        })
        .collect();
    let approx = truncate(&f, rank).map_err(|e| e.to_string())?.product();
    let economical = is_economical(rows, cols, rank);
    Ok(TruncationView {
        sigma: f.sigma.clone(),
        cumulative,
        rank,
        economical,
        speedup: layer_speedup(rows, cols, rank).map_err(|e| e.to_string())?,
        relative_error: m.sub(&approx).frobenius_norm() / m.frobenius_norm(),
        dense_params: rows * cols,
        factored_params: rank * (rows + cols),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardCurves {
    /// (error, reward) for evaluated schemes.
    pub reward: Vec<[f64; 2]>,
    /// (speedup, punishment) for schemes below the target.
    pub punish: Vec<[f64; 2]>,
}

pub fn reward_curves(baseline_error: f64, target_speedup: f64, mode: RewardMode, points: usize) -> Result<RewardCurves, String> {
    let cfg = RewardConfig::new(mode, baseline_error, target_speedup).map_err(|e| e.to_string())?;
    let points = points.max(2);
    let span = |lo: f64, hi: f64| (0..points).map(move |i| lo + (hi - lo) * i as f64 / (points - 1) as f64);
    let reward = span(0.0, 3.0 * baseline_error)
        .map(|w| cfg.reward(w).map(|r| [w, r]))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let punish = span(1.0, target_speedup)
        .map(|a| cfg.punish(a).map(|r| [a, r]))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok(RewardCurves { reward, punish })
}

/// Layer widths and spectral decays of the demo network: the flat-spectrum first and last
/// layers are sensitive, the middle ones compress well.
const DEMO_WIDTHS: [usize; 6] = [32, 64, 64, 64, 32, 10];
const DEMO_DECAYS: [f64; 5] = [0.5, 9.0, 5.0, 9.0, 1.0];
const DEMO_NAMES: [&str; 5] = ["input", "mix", "wide", "hidden", "readout"];
const DEMO_SAMPLES: usize = 400;
const DEMO_NOISE: f64 = 0.1;
pub const DEMO_ENERGIES: [f64; 8] = [1.0, 0.95, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4];

/// A small network with engineered spectra and a dataset labelled by its own predictions,
/// with a fraction of labels flipped so the uncompressed error is not zero.
pub fn demo_problem(seed: u64) -> (LayeredModel, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = DEMO_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut w = decaying_matrix(DEMO_WIDTHS[i], DEMO_WIDTHS[i + 1], DEMO_DECAYS[i], &mut rng);
            // Gain of about 2 per unit: pre-activations stay in tanh's responsive range.
            let scale = (2.0 * DEMO_WIDTHS[i + 1] as f64).sqrt() / w.frobenius_norm();
            w.scale(scale);
            LayerSpec::new(*name, w, true)
        })
        .collect();
    let model = LayeredModel::new(layers, BTreeMap::new()).expect("demo layers chain");
    let features = Matrix::from_fn(DEMO_SAMPLES, DEMO_WIDTHS[0], |_, _| rng.sample(StandardNormal));
    let mut labels = predict(&CompressedModel::from(&model), &features).expect("demo model runs");
    let classes = DEMO_WIDTHS[DEMO_WIDTHS.len() - 1];
    let mut positions: Vec<usize> = (0..DEMO_SAMPLES).collect();
    positions.shuffle(&mut rng);
    for &p in &positions[..(DEMO_SAMPLES as f64 * DEMO_NOISE) as usize] {
        labels[p] = (labels[p] + rng.gen_range(1..classes)) % classes;
    }
    let dataset = Dataset::new(Split::Dev, (0..DEMO_SAMPLES).collect(), features, labels, vec![1; DEMO_SAMPLES]).expect("demo dataset");
    (model, dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub step: u64,
    pub speedup: f64,
    pub error: Option<f64>,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualPoint {
    pub energy: f64,
    pub speedup: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPoint {
    pub ranks: Vec<usize>,
    pub speedup: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchView {
    pub baseline_error: f64,
    pub target_speedup: f64,
    pub layers: Vec<String>,
    pub points: Vec<ScatterPoint>,
    pub manual: Vec<ManualPoint>,
    pub best: Option<BestPoint>,
}

/// Runs a short search on the demo network and returns a speedup/error scatter, the
/// equal-energy manual curve and the best feasible scheme.
pub fn search_view(target_speedup: f64, steps: usize, seed: u64, mode: RewardMode) -> Result<SearchView, String> {
    const MAX_STEPS: usize = 5000;
    if steps > MAX_STEPS {
        return Err(format!("at most {MAX_STEPS} steps"));
    }
    let err = |e: rankpilot::Error| e.to_string();
    let (model, data) = demo_problem(seed);
    let factors = ModelFactors::new(&model).map_err(err)?;
    let baseline_error = data.evaluate(&CompressedModel::from(&model), false).map_err(err)?.error;
    let reward = RewardConfig::new(mode, baseline_error, target_speedup).map_err(err)?;
    let space = build_space_with(&model, &factors, &vec![DEMO_ENERGIES.to_vec(); DEMO_NAMES.len()]).map_err(err)?;
    let mut config = SearchConfig::new(space, reward, steps, seed);
    config.controller.hidden = 32;
    config.controller.embed = 32;
    config.controller.learning_rate = 5e-3;
    let out = run_search(&config, &model, &data, None).map_err(err)?;

    let points = out
        .records
        .iter()
        .map(|r| ScatterPoint { step: r.step, speedup: r.speedup, error: r.error, rejected: r.rejected })
        .collect();
    let best = out
        .explored
        .iter()
        .min_by(|a, b| a.error.total_cmp(&b.error).then(b.speedup.total_cmp(&a.speedup)))
        .map(|p| BestPoint { ranks: p.scheme.ranks().to_vec(), speedup: p.speedup, error: p.error });
    let manual = (6..=20)
        .map(|i| {
            let energy = i as f64 * 0.05;
            let scheme = manual_scheme_with(&model, &factors, energy)?;
            let error = data.evaluate(&apply_scheme_with(&model, &factors, &scheme)?, false)?.error;
            Ok(ManualPoint { energy, speedup: scheme_speedup(&model, &scheme)?, error })
        })
        .collect::<Result<_, rankpilot::Error>>()
        .map_err(err)?;
    Ok(SearchView {
        baseline_error,
        target_speedup,
        layers: DEMO_NAMES.iter().map(|s| s.to_string()).collect(),
        points,
        manual,
        best,
    })
}
