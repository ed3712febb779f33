use std::collections::HashSet;
use std::sync::OnceLock;

use rankpilot::condense::{
    cohort_errors, condense_select, sample_correlations, subset_fidelity, top_correlated, CondenseConfig,
};
use rankpilot::evaluator::toy::{build_toy_profile, cohort_models, probe_models, ToyProfile, LAYER_NAMES, SWEEP_ENERGIES};
use rankpilot::evaluator::train::{retrain, TrainConfig};
use rankpilot::evaluator::{evaluate, Evaluator, Split};
use rankpilot::lowrank::rank_for_energy;
use rankpilot::netmodel::{apply_scheme, CompressedModel, ModelFactors};
use rankpilot::space::{guard_rank, guided_manual_scheme, manual_scheme, sensitive_layers, sensitivity_sweep};

fn profile() -> &'static ToyProfile {
    static PROFILE: OnceLock<ToyProfile> = OnceLock::new();
    PROFILE.get_or_init(|| build_toy_profile(0).unwrap())
}

fn names(list: &[&str]) -> HashSet<String> {
    list.iter().map(|s| s.to_string()).collect()
}

#[test]
fn profile_shape_and_quality() {
    let p = profile();
    let shapes: Vec<_> = p.model.layers().iter().map(|l| l.weights.shape()).collect();
    assert_eq!(shapes, vec![(64, 96), (96, 96), (96, 96), (96, 96), (96, 32), (32, 8)]);
    assert_eq!(p.model.layers().iter().map(|l| l.name.as_str()).collect::<Vec<_>>(), LAYER_NAMES);
    assert!(p.train.len() >= 2000 && p.dev.len() >= 500 && p.test.len() >= 500);
    assert_eq!(p.noisy_ids.len(), p.dev.len() / 5);
    assert!(p.clean_dev_error < 15.0);
    let ids: HashSet<usize> = p.train.ids.iter().chain(&p.dev.ids).chain(&p.test.ids).copied().collect();
    assert_eq!(ids.len(), p.train.len() + p.dev.len() + p.test.len(), "splits are disjoint");
}

#[test]
fn profile_is_deterministic() {
    let again = build_toy_profile(0).unwrap();
    assert_eq!(again.baseline_error, profile().baseline_error);
    assert_eq!(again.model, profile().model);
}

#[test]
fn identity_scheme_reproduces_the_baseline() {
    let p = profile();
    let compressed = apply_scheme(&p.model, &p.model.identity_scheme()).unwrap();
    let r = evaluate(&compressed, &p.dev, true).unwrap();
    assert_eq!(r.error, p.baseline_error);
    let per_sample = r.per_sample.unwrap();
    assert!((p.dev.aggregate(&per_sample) - r.error).abs() < 1e-12);
    assert_eq!(evaluate(&compressed, &p.dev, false).unwrap().error, r.error);
}

#[test]
fn sweep_finds_the_redundant_layer() {
    let p = profile();
    let report = sensitivity_sweep(&p.model, &p.dev, &SWEEP_ENERGIES).unwrap();
    assert_eq!(report.entries.len(), 6 * SWEEP_ENERGIES.len());
    for layer in LAYER_NAMES {
        assert_eq!(report.entry(layer, 1.0).unwrap().error, p.baseline_error);
    }
    let input = report.entry("input", 0.3).unwrap().error;
    let wide = report.entry("wide", 0.3).unwrap().error;
    assert!(input - p.baseline_error > wide - p.baseline_error);
    let sensitive = sensitive_layers(&report, 0.7, 1.0);
    assert!(sensitive.contains(&"input".to_string()));
    assert!(!sensitive.contains(&"wide".to_string()));

    let small = sensitivity_sweep(&p.model.with_searchable(&["input", "wide", "output"]).unwrap(), &p.dev, &[0.3, 0.5, 0.7, 1.0])
        .unwrap();
    assert_eq!(small.entries.len(), 12);
    assert!(small.to_csv().starts_with("layer,energy,rank,error,delta_vs_baseline\n"));
}

#[test]
fn manual_baselines_follow_the_per_layer_oracle() {
    let p = profile();
    let factors = ModelFactors::new(&p.model).unwrap();
    let oracle = |energy: f64| -> Vec<usize> {
        p.model
            .layers()
            .iter()
            .zip(factors.spectra())
            .map(|(l, s)| guard_rank(l.weights.rows(), l.weights.cols(), rank_for_energy(s, energy).unwrap()))
            .collect()
    };
    assert_eq!(manual_scheme(&p.model, 0.6).unwrap().ranks(), oracle(0.6));
    let guided = guided_manual_scheme(&p.model, 0.5, &names(&["input", "output"])).unwrap();
    let mut expected = oracle(0.5);
    expected[0] = 0;
    expected[5] = 0;
    assert_eq!(guided.ranks(), expected);
    assert_eq!(guided_manual_scheme(&p.model, 0.5, &HashSet::new()).unwrap(), manual_scheme(&p.model, 0.5).unwrap());
    assert!(guided_manual_scheme(&p.model, 0.5, &names(&LAYER_NAMES)).unwrap().is_identity());
    assert!(guided_manual_scheme(&p.model, 0.5, &names(&["nope"])).is_err());
}

#[test]
fn cohort_matrix_shape_and_degenerate_cohorts() {
    let p = profile();
    let cohorts = cohort_models(p, 17).unwrap();
    assert_eq!(cohorts.len(), 8);
    let ce = cohort_errors(&p.dev, &cohorts).unwrap();
    assert_eq!(ce.sample_errors.shape(), (p.dev.len(), 8));
    for (c, model) in cohorts.iter().enumerate() {
        assert_eq!(ce.fullset_errors[c], evaluate(model, &p.dev, false).unwrap().error);
    }
    let r = sample_correlations(&ce).unwrap();
    assert!(r.iter().filter(|x| !x.is_nan()).all(|x| (-1.0..=1.0).contains(x)));

    let dense = CompressedModel::from(&p.model);
    let same = cohort_errors(&p.dev, &[dense.clone(), dense.clone()]).unwrap();
    assert_eq!(same.sample_errors.column(0), same.sample_errors.column(1));
    assert_eq!(same.fullset_errors[0], same.fullset_errors[1]);
    assert!(sample_correlations(&same).is_err());

    let one = p.dev.select(&[0], Split::Dev);
    let single = cohort_errors(&one, &cohorts[..2]).unwrap();
    assert_eq!(single.sample_errors.shape(), (1, 2));
    assert_eq!(single.sample_errors.row(0), single.fullset_errors.as_slice());
}

#[test]
fn condensed_selection_is_monotone_in_the_threshold() {
    let p = profile();
    let ce = cohort_errors(&p.dev, &cohort_models(p, 17).unwrap()).unwrap();
    let mut previous = usize::MAX;
    for t in [-1.0, -0.5, 0.0, 0.3, 0.5, 0.7, 0.9] {
        let n = condense_select(&ce, &CondenseConfig::new(t, 0)).map(|s| s.len()).unwrap_or(0);
        assert!(n <= previous);
        previous = n;
    }
    let r = sample_correlations(&ce).unwrap();
    let all = condense_select(&ce, &CondenseConfig::new(-1.0, 0)).unwrap();
    assert_eq!(all.len(), r.iter().filter(|x| !x.is_nan() && **x > -1.0).count());
    assert!(condense_select(&ce, &CondenseConfig::new(1.0, 0)).is_err());
}

#[test]
fn fidelity_of_full_and_noise_only_subsets() {
    let p = profile();
    let probes = probe_models(p, 20, 0.5, 99).unwrap();
    assert!((subset_fidelity(&p.dev, &p.dev, &probes).unwrap() - 1.0).abs() < 1e-12);

    // A sample whose label was flipped is wrong under every probe: its error never moves, so
    // it carries no information about the full set.
    let noisy = p.dev.subset_by_ids(&p.noisy_ids[..1], Split::Condensed).unwrap();
    match subset_fidelity(&noisy, &p.dev, &probes) {
        Ok(f) => assert!(f.abs() < 0.5, "noise-only fidelity {f}"),
        Err(e) => assert!(matches!(e, rankpilot::Error::DegenerateFullset)),
    }

    let ce = cohort_errors(&p.dev, &cohort_models(p, 17).unwrap()).unwrap();
    let r = sample_correlations(&ce).unwrap();
    let sel = top_correlated(&ce, &r, 16).unwrap();
    let sub = p.dev.subset_by_ids(&sel, Split::Condensed).unwrap();
    assert!(subset_fidelity(&sub, &p.dev, &probes).unwrap() > 0.5);
}

#[test]
fn one_epoch_on_the_full_rank_model_stays_near_baseline() {
    let p = profile();
    let model = CompressedModel::from(&p.model);
    let out = retrain(&model, &p.train, &TrainConfig::new(1, 3)).unwrap();
    assert_eq!(out.model.param_count(), model.param_count());
    assert_eq!(out.history.len(), 1);
    let err = p.dev.evaluate(&out.model, false).unwrap().error;
    assert!((err - p.baseline_error).abs() <= 2.0, "{err} vs {}", p.baseline_error);
}
