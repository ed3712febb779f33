//! Deterministic desk-scale stand-in for a production model: a six-layer `tanh` perceptron
//! trained on a seeded Gaussian-cluster classification corpus.
//!
//! Inputs come from many clusters spread over all input dimensions, so the first layer needs
//! most of its rank. The second layer is trained directly in factored form with a narrow inner
//! rank, which makes it low-rank by construction, and the wide layer after it only ever sees
//! activations from that low-dimensional image.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::train::{TrainConfig, Trainer};
use super::{evaluate, Dataset, Split};
use crate::error::{Error, Result};
use crate::lowrank::TruncatedPair;
use crate::matrix::Matrix;
use crate::netmodel::{apply_scheme_with, CompressedLayer, CompressedModel, LayeredModel, ModelFactors, Scheme};
use crate::space::manual_scheme_with;

/// Seeds tried in order by [`build_toy_profile_with_fallback`] when the requested seed fails.
pub const FALLBACK_SEEDS: [u64; 4] = [1, 2, 3, 5];
pub const MAX_CLEAN_DEV_ERROR: f64 = 15.0;

/// Equal-energy compressions of the baseline included in the cohort suite.
pub const COHORT_ENERGIES: [f64; 3] = [0.8, 0.7, 0.6];
/// Lowest per-layer energy of the randomly compressed cohort members.
pub const COHORT_MIN_ENERGY: f64 = 0.5;

/// Energy levels of the default single-layer sensitivity sweep.
pub const SWEEP_ENERGIES: [f64; 8] = [0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0];
/// Per-layer energy options of the default conservative search space.
pub const SEARCH_ENERGIES: [f64; 8] = [1.0, 0.97, 0.94, 0.9, 0.85, 0.8, 0.75, 0.7];
/// Per-layer energy options of the default aggressive search space.
pub const AGGRESSIVE_ENERGIES: [f64; 8] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3];
/// Speedup target of the default conservative search.
pub const CONSERVATIVE_TARGET: f64 = 1.2;
/// Speedup target of the default aggressive search; equal-energy compression loses well over
/// 15 points of dev error at this speedup.
pub const AGGRESSIVE_TARGET: f64 = 2.0;
/// Layers the guided manual baseline leaves dense: the first layer and the two output layers.
pub const GUIDED_EXCLUDED: [&str; 3] = ["input", "readout", "output"];
/// Correlation threshold for condensing the toy dev split.
pub const CONDENSE_CORREL_MIN: f64 = 0.7;

pub const LAYER_NAMES: [&str; 6] = ["input", "bottleneck", "wide", "hidden", "readout", "output"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub readout: usize,
    pub classes: usize,
    pub clusters: usize,
    pub bottleneck_rank: usize,
    pub cluster_spread: f64,
    pub train_samples: usize,
    pub dev_samples: usize,
    pub test_samples: usize,
    pub noise_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            input_dim: 64,
            hidden: 96,
            readout: 32,
            classes: 8,
            clusters: 48,
            bottleneck_rank: 24,
            cluster_spread: 1.0,
            train_samples: 2000,
            dev_samples: 500,
            test_samples: 2000,
            noise_fraction: 0.2,
            epochs: 40,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyProfile {
    pub seed: u64,
    pub model: LayeredModel,
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    /// Dev error of the trained model, noise samples included.
    pub baseline_error: f64,
    pub test_error: f64,
    /// Dev error restricted to samples without injected label noise.
    pub clean_dev_error: f64,
    /// Ids of dev samples whose label was replaced by a wrong class.
    pub noisy_ids: Vec<usize>,
}

impl ToyProfile {
    pub fn split(&self, split: Split) -> Option<&Dataset> {
        match split {
            Split::Train => Some(&self.train),
            Split::Dev => Some(&self.dev),
            Split::Test => Some(&self.test),
            Split::Condensed => None,
        }
    }
}

pub fn build_toy_profile(seed: u64) -> Result<ToyProfile> {
    build_toy_profile_with(seed, &ToyConfig::default())
}

/// Tries `seed`, then each of [`FALLBACK_SEEDS`], returning the first profile that trains.
pub fn build_toy_profile_with_fallback(seed: u64) -> Result<ToyProfile> {
    let mut last = None;
    for s in std::iter::once(seed).chain(FALLBACK_SEEDS) {
        match build_toy_profile(s) {
            Ok(p) => return Ok(p),
            Err(e @ Error::ProfileBuild(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

pub fn build_toy_profile_with(seed: u64, cfg: &ToyConfig) -> Result<ToyProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, dev, test, noisy_ids) = make_corpus(cfg, &mut rng)?;

    let h = cfg.hidden;
    let mut net = CompressedModel {
        layers: vec![
            dense("input", xavier(cfg.input_dim, h, &mut rng)),
            CompressedLayer::Factored {
                name: "bottleneck".into(),
                pair: TruncatedPair { u_trunc: xavier(h, cfg.bottleneck_rank, &mut rng), v_star: xavier(cfg.bottleneck_rank, h, &mut rng) },
                searchable: true,
            },
            dense("wide", xavier(h, h, &mut rng)),
            dense("hidden", xavier(h, h, &mut rng)),
            dense("readout", xavier(h, cfg.readout, &mut rng)),
            dense("output", xavier(cfg.readout, cfg.classes, &mut rng)),
        ],
        metadata: BTreeMap::new(),
    };
    let train_cfg = TrainConfig { learning_rate: cfg.learning_rate, ..TrainConfig::new(cfg.epochs, rng.gen()) };
    let mut trainer = Trainer::new(&net, &train_cfg)?;
    for _ in 0..cfg.epochs {
        trainer.epoch(&mut net, &train)?;
    }

    net.metadata = toy_metadata(seed, cfg);
    let model = net.densify()?;
    let baseline_error = super::evaluate_dense(&model, &dev, false)?.error;
    let test_error = super::evaluate_dense(&model, &test, false)?.error;
    let clean_positions: Vec<usize> = (0..dev.len()).filter(|&p| !noisy_ids.contains(&dev.ids[p])).collect();
    let clean_dev_error = super::evaluate_dense(&model, &dev.select(&clean_positions, Split::Dev), false)?.error;
    if clean_dev_error >= MAX_CLEAN_DEV_ERROR {
        return Err(Error::ProfileBuild(format!(
            "seed {seed}: clean dev error {clean_dev_error:.2}% is not below {MAX_CLEAN_DEV_ERROR}%"
        )));
    }
    Ok(ToyProfile { seed, model, train, dev, test, baseline_error, test_error, clean_dev_error, noisy_ids })
}

fn toy_metadata(seed: u64, cfg: &ToyConfig) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("activation".into(), "tanh".into());
    meta.insert("profile".into(), "toy".into());
    meta.insert("seed".into(), seed.to_string());
    meta.insert("bottleneck_rank".into(), cfg.bottleneck_rank.to_string());
    meta
}

fn dense(name: &str, weights: Matrix) -> CompressedLayer {
    CompressedLayer::Dense { name: name.into(), weights, searchable: true }
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
}

fn make_corpus(cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Result<(Dataset, Dataset, Dataset, Vec<usize>)> {
    if cfg.classes < 2 || cfg.clusters < cfg.classes {
        return Err(Error::ProfileBuild("need at least two classes and one cluster per class".into()));
    }
    let dim = cfg.input_dim;
    let centers: Vec<Vec<f64>> =
        (0..cfg.clusters).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect()).collect();
    let scale = 1.0 / (1.0 + cfg.cluster_spread * cfg.cluster_spread).sqrt();

    let mut next_id = 0;
    let mut draw = |count: usize, split: Split, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let mut data = Vec::with_capacity(count * dim);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let k = rng.gen_range(0..cfg.clusters);
            for c in &centers[k] {
                let noise: f64 = StandardNormal.sample(&mut *rng);
                data.push((c + cfg.cluster_spread * noise) * scale);
            }
            labels.push(k % cfg.classes);
        }
        let ids = (next_id..next_id + count).collect();
        next_id += count;
        Dataset::new(split, ids, Matrix::from_vec(count, dim, data), labels, vec![1; count])
    };
    let train = draw(cfg.train_samples, Split::Train, rng)?;
    let mut dev = draw(cfg.dev_samples, Split::Dev, rng)?;
    let test = draw(cfg.test_samples, Split::Test, rng)?;

    let noisy = ((cfg.dev_samples as f64) * cfg.noise_fraction).round() as usize;
    let mut positions: Vec<usize> = (0..dev.len()).collect();
    positions.shuffle(rng);
    let mut noisy_positions = positions[..noisy].to_vec();
    noisy_positions.sort_unstable();
    for &p in &noisy_positions {
        let shift = rng.gen_range(1..cfg.classes);
        dev.labels[p] = (dev.labels[p] + shift) % cfg.classes;
    }
    let noisy_ids = noisy_positions.iter().map(|&p| dev.ids[p]).collect();
    Ok((train, dev, test, noisy_ids))
}

/// Eight cohort models for proxy-set condensation: two independently trained perceptrons of
/// different depth and width, three equal-energy compressions of the baseline and three
/// compressions with randomly drawn per-layer energies.
pub fn cohort_models(profile: &ToyProfile, seed: u64) -> Result<Vec<CompressedModel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = profile.train.feature_dim();
    let classes = profile.model.layers().last().expect("non-empty").weights.cols();
    let mut cohorts = Vec::with_capacity(8);
    for widths in [vec![48], vec![64, 64]] {
        let mut dims = vec![dim];
        dims.extend(widths);
        dims.push(classes);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| dense(&format!("c{i}"), xavier(w[0], w[1], &mut rng)))
            .collect();
        let mut net = CompressedModel { layers, metadata: BTreeMap::new() };
        let cfg = TrainConfig::new(6, rng.gen());
        let mut trainer = Trainer::new(&net, &cfg)?;
        for _ in 0..cfg.epochs {
            trainer.epoch(&mut net, &profile.train)?;
        }
        cohorts.push(net);
    }
    let factors = ModelFactors::new(&profile.model)?;
    for energy in COHORT_ENERGIES {
        let scheme = manual_scheme_with(&profile.model, &factors, energy)?;
        cohorts.push(apply_scheme_with(&profile.model, &factors, &scheme)?);
    }
    cohorts.extend(probe_models_with(profile, &factors, 3, COHORT_MIN_ENERGY, &mut rng)?);
    Ok(cohorts)
}

/// Randomly compressed variants of the baseline, each layer at an energy drawn from `[low, 1]`.
pub fn probe_models(profile: &ToyProfile, count: usize, low: f64, seed: u64) -> Result<Vec<CompressedModel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = ModelFactors::new(&profile.model)?;
    probe_models_with(profile, &factors, count, low, &mut rng)
}

fn probe_models_with(
    profile: &ToyProfile,
    factors: &ModelFactors,
    count: usize,
    low: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CompressedModel>> {
    let mut probes = Vec::with_capacity(count);
    for _ in 0..count {
        let ranks = profile
            .model
            .searchable_layers()
            .zip(factors.spectra())
            .map(|(layer, sigma)| {
                let e: f64 = rng.gen_range(low..=1.0);
                let (m, n) = layer.weights.shape();
                crate::lowrank::rank_for_energy(sigma, e).map(|k| crate::space::guard_rank(m, n, k))
            })
            .collect::<Result<Vec<_>>>()?;
        probes.push(apply_scheme_with(&profile.model, factors, &Scheme::new(ranks))?);
    }
    Ok(probes)
}

/// Error of `model` on every split of the profile, as (dev, test).
pub fn dev_test_errors(profile: &ToyProfile, model: &CompressedModel) -> Result<(f64, f64)> {
    Ok((evaluate(model, &profile.dev, false)?.error, evaluate(model, &profile.test, false)?.error))
}
