//! Proxy-dataset condensation: keep the samples whose error across a cohort of models tracks
//! the whole set's error across the same cohort.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{Dataset, Evaluator, Split};
use crate::matrix::Matrix;
use crate::netmodel::CompressedModel;

/// Per-sample and whole-set errors of every cohort model.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortErrors {
    pub sample_ids: Vec<usize>,
    /// `num_samples × num_cohorts`.
    pub sample_errors: Matrix,
    pub fullset_errors: Vec<f64>,
    pub sample_lengths: Vec<usize>,
}

impl CohortErrors {
    pub fn new(sample_ids: Vec<usize>, sample_errors: Matrix, fullset_errors: Vec<f64>, sample_lengths: Vec<usize>) -> Result<Self> {
        let (rows, cols) = sample_errors.shape();
        if cols < 2 {
            return Err(Error::ContractViolation(format!("correlation needs at least 2 cohorts, got {cols}")));
        }
        if fullset_errors.len() != cols || sample_ids.len() != rows || sample_lengths.len() != rows {
            return Err(Error::ContractViolation("cohort error shapes disagree".into()));
        }
        Ok(Self { sample_ids, sample_errors, fullset_errors, sample_lengths })
    }

    pub fn num_samples(&self) -> usize {
        self.sample_errors.rows()
    }

    pub fn num_cohorts(&self) -> usize {
        self.sample_errors.cols()
    }
}

/// Scores every sample of `dataset` under every cohort model with the built-in evaluator.
pub fn cohort_errors(dataset: &Dataset, cohorts: &[CompressedModel]) -> Result<CohortErrors> {
    cohort_errors_with(&dataset.ids, &dataset.lengths, cohorts, dataset)
}

/// Scores samples under every cohort model through an arbitrary per-sample evaluator.
pub fn cohort_errors_with(
    ids: &[usize],
    lengths: &[usize],
    cohorts: &[CompressedModel],
    evaluator: &dyn Evaluator,
) -> Result<CohortErrors> {
    if cohorts.len() < 2 {
        return Err(Error::ContractViolation(format!("correlation needs at least 2 cohorts, got {}", cohorts.len())));
    }
    let mut errors = Matrix::zeros(ids.len(), cohorts.len());
    let mut fullset = Vec::with_capacity(cohorts.len());
    for (c, model) in cohorts.iter().enumerate() {
        let result = evaluator.evaluate(model, true).map_err(|e| e.context(format!("cohort {c}")))?;
        let per_sample = result
            .per_sample
            .ok_or_else(|| Error::Protocol(format!("cohort {c}: evaluator returned no per-sample errors")))?;
        if per_sample.len() != ids.len() {
            return Err(Error::Protocol(format!(
                "cohort {c}: expected {} per-sample errors, got {}",
                ids.len(),
                per_sample.len()
            )));
        }
        for (s, &e) in per_sample.iter().enumerate() {
            if !e.is_finite() {
                return Err(Error::Protocol(format!("sample {} under cohort {c}: non-finite error", ids[s])));
            }
            errors[(s, c)] = e;
        }
        fullset.push(result.error);
    }
    CohortErrors::new(ids.to_vec(), errors, fullset, lengths.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    #[default]
    Pearson,
    Spearman,
}

/// Pearson correlation, or `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "correlation inputs differ in length");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks with ties sharing their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn correlation(x: &[f64], y: &[f64], kind: CorrelationKind) -> Option<f64> {
    match kind {
        CorrelationKind::Pearson => pearson(x, y),
        CorrelationKind::Spearman => pearson(&ranks(x), &ranks(y)),
    }
}

/// Pearson correlation of every sample's cohort row with the whole-set cohort errors.
/// Zero-variance rows are excluded and reported as NaN.
pub fn sample_correlations(ce: &CohortErrors) -> Result<Vec<f64>> {
    sample_correlations_with(ce, CorrelationKind::Pearson)
}

pub fn sample_correlations_with(ce: &CohortErrors, kind: CorrelationKind) -> Result<Vec<f64>> {
    if correlation(&ce.fullset_errors, &ce.fullset_errors, kind).is_none() {
        return Err(Error::DegenerateFullset);
    }
    Ok((0..ce.num_samples())
        .map(|s| correlation(ce.sample_errors.row(s), &ce.fullset_errors, kind).unwrap_or(f64::NAN))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondenseConfig {
    pub correl_min: f64,
    #[serde(default)]
    pub min_length: usize,
    #[serde(default)]
    pub correlation: CorrelationKind,
}

impl CondenseConfig {
    pub fn new(correl_min: f64, min_length: usize) -> Self {
        Self { correl_min, min_length, correlation: CorrelationKind::Pearson }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.correl_min) {
            return Err(Error::ContractViolation(format!("correl_min must lie in [-1, 1], got {}", self.correl_min)));
        }
        Ok(())
    }
}

/// Ids of samples with correlation strictly above `correl_min` and length at least
/// `min_length`, in their original order.
pub fn condense_select(ce: &CohortErrors, config: &CondenseConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let correlations = sample_correlations_with(ce, config.correlation)?;
    select_from_correlations(ce, &correlations, config)
}

pub fn select_from_correlations(ce: &CohortErrors, correlations: &[f64], config: &CondenseConfig) -> Result<Vec<usize>> {
    let selected: Vec<usize> = (0..ce.num_samples())
        .filter(|&s| correlations[s] > config.correl_min && ce.sample_lengths[s] >= config.min_length)
        .map(|s| ce.sample_ids[s])
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyCondensedSet { correl_min: config.correl_min, min_length: config.min_length });
    }
    Ok(selected)
}

/// Ids of the `size` best-correlated samples (ties keep the earlier sample), in original order.
pub fn top_correlated(ce: &CohortErrors, correlations: &[f64], size: usize) -> Result<Vec<usize>> {
    let mut ranked: Vec<usize> = (0..ce.num_samples()).filter(|&s| !correlations[s].is_nan()).collect();
    if size > ranked.len() {
        return Err(Error::InvalidSize { size, available: ranked.len() });
    }
    ranked.sort_by(|&a, &b| correlations[b].total_cmp(&correlations[a]).then(a.cmp(&b)));
    ranked.truncate(size);
    ranked.sort_unstable();
    Ok(ranked.into_iter().map(|s| ce.sample_ids[s]).collect())
}

/// A seeded uniform sample of `size` ids without replacement.
pub fn random_select(ids: &[usize], size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > ids.len() {
        return Err(Error::InvalidSize { size, available: ids.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ids.choose_multiple(&mut rng, size).copied().collect())
}

/// Correlation between subset and full-set errors across probe models.
pub fn subset_fidelity(subset: &Dataset, full: &Dataset, probes: &[CompressedModel]) -> Result<f64> {
    subset_fidelity_with(subset, full, probes)
}

pub fn subset_fidelity_with(subset: &dyn Evaluator, full: &dyn Evaluator, probes: &[CompressedModel]) -> Result<f64> {
    if probes.len() < 2 {
        return Err(Error::ContractViolation(format!("fidelity needs at least 2 probe models, got {}", probes.len())));
    }
    let mut sub = Vec::with_capacity(probes.len());
    let mut all = Vec::with_capacity(probes.len());
    for (i, probe) in probes.iter().enumerate() {
        sub.push(subset.evaluate(probe, false).map_err(|e| e.context(format!("probe {i} on subset")))?.error);
        all.push(full.evaluate(probe, false).map_err(|e| e.context(format!("probe {i} on full set")))?.error);
    }
    pearson(&sub, &all).ok_or(Error::DegenerateFullset)
}

/// Baseline error for rewards computed on a proxy split.
///
/// A small condensed set is often classified perfectly by the uncompressed model, which would
/// leave the reward without a positive reference; the result is therefore floored at the
/// error a single mistake on the shortest sample would cost.
pub fn proxy_baseline_error(dense_error: f64, proxy: &Dataset) -> f64 {
    let total: usize = proxy.lengths.iter().sum();
    let shortest = proxy.lengths.iter().copied().filter(|&l| l > 0).min().unwrap_or(1);
    let floor = if total == 0 { 100.0 } else { 100.0 * shortest as f64 / total as f64 };
    dense_error.max(floor)
}

/// The condensed dataset as a proxy split.
pub fn condensed_dataset(full: &Dataset, selected: &[usize]) -> Result<Dataset> {
    full.subset_by_ids(selected, Split::Condensed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondenseManifest {
    pub correl_min: f64,
    pub min_length: usize,
    pub cohort_ids: Vec<String>,
    pub selected: Vec<usize>,
    /// Correlation of every selected sample, keyed by sample id.
    pub correlations: BTreeMap<String, f64>,
}

impl CondenseManifest {
    pub fn new(config: &CondenseConfig, cohort_ids: Vec<String>, ce: &CohortErrors, correlations: &[f64], selected: Vec<usize>) -> Self {
        let chosen: std::collections::HashSet<usize> = selected.iter().copied().collect();
        let correlations = ce
            .sample_ids
            .iter()
            .zip(correlations)
            .filter(|(id, _)| chosen.contains(id))
            .map(|(id, &c)| (id.to_string(), c))
            .collect();
        Self { correl_min: config.correl_min, min_length: config.min_length, cohort_ids, selected, correlations }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ce(rows: &[&[f64]], g: &[f64]) -> CohortErrors {
        let m = Matrix::from_rows(rows);
        let n = rows.len();
        CohortErrors::new((0..n).collect(), m, g.to_vec(), vec![1; n]).unwrap()
    }

    #[test]
    fn correlation_examples() {
        let c = ce(&[&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], &[5.0, 5.0, 5.0]], &[2.0, 4.0, 6.0]);
        let r = sample_correlations(&c).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!((r[1] + 1.0).abs() < 1e-12);
        assert!(r[2].is_nan());
    }

    #[test]
    fn degenerate_fullset() {
        let c = ce(&[&[1.0, 2.0]], &[3.0, 3.0]);
        assert!(matches!(sample_correlations(&c), Err(Error::DegenerateFullset)));
    }

    #[test]
    fn too_few_cohorts() {
        let m = Matrix::from_rows(&[&[1.0]]);
        assert!(CohortErrors::new(vec![0], m, vec![1.0], vec![1]).is_err());
    }

    #[test]
    fn thresholds() {
        let c = ce(&[&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], &[5.0, 5.0, 5.0], &[1.0, 3.0, 2.0]], &[2.0, 4.0, 6.0]);
        let all = condense_select(&c, &CondenseConfig::new(-1.0, 0)).unwrap();
        assert_eq!(all, vec![0, 3]);
        assert!(matches!(condense_select(&c, &CondenseConfig::new(1.0, 0)), Err(Error::EmptyCondensedSet { .. })));
        let mut long = c.clone();
        long.sample_lengths = vec![1, 1, 1, 5];
        assert_eq!(condense_select(&long, &CondenseConfig::new(-1.0, 2)).unwrap(), vec![3]);
        assert!(CondenseConfig::new(1.5, 0).validate().is_err());
    }

    #[test]
    fn spearman_is_rank_based() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 4.0, 9.0, 100.0];
        assert!((correlation(&x, &y, CorrelationKind::Spearman).unwrap() - 1.0).abs() < 1e-12);
        assert!(correlation(&x, &y, CorrelationKind::Pearson).unwrap() < 1.0);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![1.5, 0.0, 1.5]);
    }

    #[test]
    fn random_selection() {
        let ids: Vec<usize> = (10..30).collect();
        let a = random_select(&ids, 5, 7).unwrap();
        assert_eq!(a, random_select(&ids, 5, 7).unwrap());
        assert!(random_select(&ids, 0, 7).unwrap().is_empty());
        let mut full = random_select(&ids, 20, 7).unwrap();
        full.sort_unstable();
        assert_eq!(full, ids);
        assert!(matches!(random_select(&ids, 21, 7), Err(Error::InvalidSize { size: 21, available: 20 })));
    }

    #[test]
    fn top_correlated_skips_excluded() {
        let c = ce(&[&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0], &[1.0, 3.0, 2.0], &[3.0, 2.0, 1.0]], &[2.0, 4.0, 6.0]);
        let r = sample_correlations(&c).unwrap();
        assert_eq!(top_correlated(&c, &r, 2).unwrap(), vec![0, 2]);
        assert!(top_correlated(&c, &r, 4).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let c = ce(&[&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0], &[3.0, 2.0, 1.0]], &[2.0, 4.0, 6.0]);
        let cfg = CondenseConfig::new(0.5, 0);
        let r = sample_correlations(&c).unwrap();
        let sel = select_from_correlations(&c, &r, &cfg).unwrap();
        let m = CondenseManifest::new(&cfg, vec!["a".into(), "b".into(), "c".into()], &c, &r, sel);
        assert_eq!(m.selected, vec![0]);
        assert_eq!(m.correlations.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(CondenseManifest::load(&path).unwrap(), m);
    }
}
