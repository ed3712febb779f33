//! Discrete search spaces of per-layer ranks, single-layer sensitivity sweeps and the two
//! equal-energy manual baselines.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::lowrank::{self, is_economical};
use crate::netmodel::{apply_scheme_with, LayeredModel, ModelFactors, Scheme};

/// `l×d` rank options (0 = leave dense) plus the energies they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub layer_names: Vec<String>,
    pub options: Vec<Vec<usize>>,
    #[serde(default)]
    pub energy_grid: Option<Vec<Vec<f64>>>,
}

impl SearchSpace {
    /// A space given directly as ranks; checked against `model`.
    pub fn from_ranks(model: &LayeredModel, options: Vec<Vec<usize>>) -> Result<Self> {
        let space = Self { layer_names: model.searchable_layers().map(|l| l.name.clone()).collect(), options, energy_grid: None };
        space.validate(model)?;
        Ok(space)
    }

    pub fn num_layers(&self) -> usize {
        self.options.len()
    }

    pub fn num_options(&self) -> usize {
        self.options.first().map_or(0, Vec::len)
    }

    /// Number of distinct index vectors, `d^l`, as a float (it overflows integers quickly).
    pub fn cardinality(&self) -> f64 {
        self.options.iter().map(|row| row.len() as f64).product()
    }

    pub fn scheme(&self, indices: &[usize]) -> Result<Scheme> {
        if indices.len() != self.options.len() {
            return Err(Error::SpaceShape(format!("{} indices for {} layers", indices.len(), self.options.len())));
        }
        indices
            .iter()
            .zip(&self.options)
            .map(|(&j, row)| row.get(j).copied().ok_or_else(|| Error::SpaceShape(format!("option index {j} out of range"))))
            .collect::<Result<Vec<_>>>()
            .map(Scheme::new)
    }

    pub fn validate(&self, model: &LayeredModel) -> Result<()> {
        let searchable: Vec<_> = model.searchable_layers().collect();
        if self.options.len() != searchable.len() || self.layer_names.len() != searchable.len() {
            return Err(Error::SpaceShape(format!(
                "space has {} rows but the model has {} searchable layers",
                self.options.len(),
                searchable.len()
            )));
        }
        let d = self.num_options();
        for ((row, name), layer) in self.options.iter().zip(&self.layer_names).zip(&searchable) {
            if *name != layer.name {
                return Err(Error::SpaceShape(format!("row `{name}` does not match layer `{}`", layer.name)));
            }
            if row.len() != d || d < 2 {
                return Err(Error::SpaceShape(format!("row `{name}` has {} options; every row needs the same d >= 2", row.len())));
            }
            if let Some(&bad) = row.iter().find(|&&k| k > layer.max_rank()) {
                return Err(Error::InvalidRank { context: format!("layer `{name}`"), rank: bad, max: layer.max_rank() });
            }
        }
        Ok(())
    }
}

/// Replaces ranks that would not reduce cost with the dense sentinel 0.
pub fn guard_rank(m: usize, n: usize, k: usize) -> usize {
    if is_economical(m, n, k) {
        k
    } else {
        0
    }
}

pub fn build_space(model: &LayeredModel, per_layer_energies: &[Vec<f64>]) -> Result<SearchSpace> {
    build_space_with(model, &ModelFactors::new(model)?, per_layer_energies)
}

pub fn build_space_with(model: &LayeredModel, factors: &ModelFactors, per_layer_energies: &[Vec<f64>]) -> Result<SearchSpace> {
    let layers: Vec<_> = model.searchable_layers().collect();
    if per_layer_energies.len() != layers.len() {
        return Err(Error::SpaceShape(format!(
            "{} energy lists for {} searchable layers",
            per_layer_energies.len(),
            layers.len()
        )));
    }
    let spectra = factors.spectra();
    let mut options = Vec::with_capacity(layers.len());
    for ((layer, energies), sigma) in layers.iter().zip(per_layer_energies).zip(spectra) {
        let (m, n) = layer.weights.shape();
        let row = energies
            .iter()
            .map(|&e| lowrank::rank_for_energy(sigma, e).map(|k| guard_rank(m, n, k)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.context(format!("layer `{}`", layer.name)))?;
        options.push(row);
    }
    let space = SearchSpace {
        layer_names: layers.iter().map(|l| l.name.clone()).collect(),
        options,
        energy_grid: Some(per_layer_energies.to_vec()),
    };
    space.validate(model)?;
    Ok(space)
}

/// Per-layer energy lists: a default grid with optional per-layer replacements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyRanges {
    pub default: Vec<f64>,
    #[serde(default)]
    pub overrides: BTreeMap<String, Vec<f64>>,
}

impl EnergyRanges {
    pub fn uniform(energies: Vec<f64>) -> Self {
        Self { default: energies, overrides: BTreeMap::new() }
    }

    pub fn resolve(&self, model: &LayeredModel) -> Result<Vec<Vec<f64>>> {
        let names: HashSet<&str> = model.searchable_layers().map(|l| l.name.as_str()).collect();
        if let Some(unknown) = self.overrides.keys().find(|k| !names.contains(k.as_str())) {
            return Err(Error::UnknownLayer(unknown.clone()));
        }
        Ok(model
            .searchable_layers()
            .map(|l| self.overrides.get(&l.name).unwrap_or(&self.default).clone())
            .collect())
    }
}

/// Every searchable layer truncated at the same energy (cost guard applied).
pub fn manual_scheme(model: &LayeredModel, energy: f64) -> Result<Scheme> {
    guided_manual_scheme(model, energy, &HashSet::new())
}

pub fn manual_scheme_with(model: &LayeredModel, factors: &ModelFactors, energy: f64) -> Result<Scheme> {
    guided_manual_scheme_with(model, factors, energy, &HashSet::new())
}

/// Like [`manual_scheme`] but layers named in `excluded` stay dense.
pub fn guided_manual_scheme(model: &LayeredModel, energy: f64, excluded: &HashSet<String>) -> Result<Scheme> {
    guided_manual_scheme_with(model, &ModelFactors::new(model)?, energy, excluded)
}

pub fn guided_manual_scheme_with(
    model: &LayeredModel,
    factors: &ModelFactors,
    energy: f64,
    excluded: &HashSet<String>,
) -> Result<Scheme> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::InvalidEnergy(energy));
    }
    let names: HashSet<&str> = model.searchable_layers().map(|l| l.name.as_str()).collect();
    if let Some(unknown) = excluded.iter().find(|e| !names.contains(e.as_str())) {
        return Err(Error::UnknownLayer(unknown.clone()));
    }
    model
        .searchable_layers()
        .zip(factors.spectra())
        .map(|(layer, sigma)| {
            if excluded.contains(&layer.name) {
                return Ok(0);
            }
            let (m, n) = layer.weights.shape();
            Ok(guard_rank(m, n, lowrank::rank_for_energy(sigma, energy)?))
        })
        .collect::<Result<Vec<_>>>()
        .map(Scheme::new)
}

/// An equal-energy scheme together with the energy that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualPoint {
    pub energy: f64,
    pub scheme: Scheme,
    pub speedup: f64,
}

/// Scans energies downward from 1.0 in steps of `resolution` and returns the first (guided)
/// equal-energy scheme whose speedup reaches `target`, or `None` if even the smallest energy
/// on the grid falls short.
pub fn manual_scheme_for_speedup(
    model: &LayeredModel,
    factors: &ModelFactors,
    target: f64,
    excluded: &HashSet<String>,
    resolution: f64,
) -> Result<Option<ManualPoint>> {
    if !(resolution > 0.0 && resolution < 1.0) {
        return Err(Error::ContractViolation(format!("energy resolution must lie in (0, 1), got {resolution}")));
    }
    let steps = (1.0 / resolution).floor() as usize;
    for i in 0..steps {
        let energy = 1.0 - i as f64 * resolution;
        let scheme = guided_manual_scheme_with(model, factors, energy, excluded)?;
        let speedup = crate::netmodel::scheme_speedup(model, &scheme)?;
        if speedup >= target {
            return Ok(Some(ManualPoint { energy, scheme, speedup }));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEntry {
    pub layer: String,
    pub energy: f64,
    /// Effective rank after the cost guard; 0 means the layer stayed dense.
    pub rank: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub baseline_error: f64,
    pub entries: Vec<SensitivityEntry>,
}

impl SensitivityReport {
    pub fn entry(&self, layer: &str, energy: f64) -> Option<&SensitivityEntry> {
        self.entries.iter().find(|e| e.layer == layer && e.energy == energy)
    }

    /// CSV with columns `layer,energy,rank,error,delta_vs_baseline`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,energy,rank,error,delta_vs_baseline\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{},{}", e.layer, e.energy, e.rank, e.error, e.error - self.baseline_error);
        }
        out
    }
}

/// Layers whose single-layer error at `energy` exceeds the baseline by more than `tolerance`,
/// in report order.
pub fn sensitive_layers(report: &SensitivityReport, energy: f64, tolerance: f64) -> Vec<String> {
    report
        .entries
        .iter()
        .filter(|e| e.energy == energy && e.error - report.baseline_error > tolerance)
        .map(|e| e.layer.clone())
        .collect()
}

/// Compresses one searchable layer at a time at each energy and records the model error.
pub fn sensitivity_sweep(model: &LayeredModel, evaluator: &dyn Evaluator, energy_levels: &[f64]) -> Result<SensitivityReport> {
    sensitivity_sweep_with(model, &ModelFactors::new(model)?, evaluator, energy_levels)
}

pub fn sensitivity_sweep_with(
    model: &LayeredModel,
    factors: &ModelFactors,
    evaluator: &dyn Evaluator,
    energy_levels: &[f64],
) -> Result<SensitivityReport> {
    if let Some(&bad) = energy_levels.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::InvalidEnergy(bad));
    }
    let layers: Vec<_> = model.searchable_layers().collect();
    if layers.is_empty() {
        return Err(Error::SpaceShape("model has no searchable layers".into()));
    }
    let identity = model.identity_scheme();
    let baseline_error = evaluator
        .evaluate(&apply_scheme_with(model, factors, &identity)?, false)
        .map_err(|e| e.context("baseline evaluation"))?
        .error;

    let mut entries = Vec::with_capacity(layers.len() * energy_levels.len());
    for (i, (layer, sigma)) in layers.iter().zip(factors.spectra()).enumerate() {
        let (m, n) = layer.weights.shape();
        for &energy in energy_levels {
            let rank = guard_rank(m, n, lowrank::rank_for_energy(sigma, energy)?);
            let error = if rank == 0 {
                baseline_error
            } else {
                let mut ranks = identity.ranks().to_vec();
                ranks[i] = rank;
                let compressed = apply_scheme_with(model, factors, &Scheme::new(ranks))?;
                evaluator
                    .evaluate(&compressed, false)
                    .map_err(|e| e.context(format!("layer `{}` at energy {energy}", layer.name)))?
                    .error
            };
            entries.push(SensitivityEntry { layer: layer.name.clone(), energy, rank, error });
        }
    }
    Ok(SensitivityReport { baseline_error, entries })
}
