mod common;

use std::collections::HashMap;

use common::{all_schemes, square_chain, FlakyEvaluator, TableEvaluator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankpilot::netmodel::{scheme_speedup, LayeredModel, Scheme};
use rankpilot::reward::{RewardConfig, RewardMode};
use rankpilot::search::{explored_from_log, read_log, replay_log, run_search, select_best, top_k, Search, SearchConfig, StepRecord};
use rankpilot::space::SearchSpace;
use rankpilot::Error;

const OPTIONS: [usize; 3] = [0, 6, 3];

fn small_problem(seed: u64) -> (LayeredModel, SearchSpace, TableEvaluator) {
    let model = square_chain(3, 16, seed);
    let space = SearchSpace::from_ranks(&model, vec![OPTIONS.to_vec(); 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let eval = TableEvaluator::from_fn(&space.options, |s| {
        let compression: usize = s.iter().map(|&k| if k == 0 { 0 } else { 8 - k }).sum();
        20.0 + 0.3 * compression as f64 + rng.gen_range(0.0..2.0)
    });
    (model, space, eval)
}

fn config(space: SearchSpace, target: f64, steps: usize, seed: u64) -> SearchConfig {
    let mut cfg = SearchConfig::new(space, RewardConfig::new(RewardMode::Conservative, 21.0, target).unwrap(), steps, seed);
    cfg.controller.hidden = 16;
    cfg.controller.embed = 16;
    cfg
}

fn exhaustive_best_reward(model: &LayeredModel, cfg: &SearchConfig, eval: &TableEvaluator) -> f64 {
    all_schemes(&cfg.space.options)
        .into_iter()
        .map(|s| {
            let a = scheme_speedup(model, &Scheme::new(s.clone())).unwrap();
            if a < cfg.reward.target_speedup {
                cfg.reward.punish(a).unwrap()
            } else {
                cfg.reward.reward(eval.table[&s]).unwrap()
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn masked(records: &[StepRecord]) -> Vec<String> {
    records.iter().map(|r| r.masked().to_json_line().unwrap()).collect()
}

#[test]
fn closed_gate_punishes_every_step() {
    let (model, space, eval) = small_problem(1);
    let cfg = config(space, 50.0, 40, 3);
    let out = run_search(&cfg, &model, &eval, None).unwrap();
    assert!(out.explored.is_empty());
    assert!(out.records.iter().all(|r| r.rejected && r.error.is_none() && r.reward <= -10.0));
    assert_eq!(eval.calls.get(), 0);
}

#[test]
fn single_option_space_repeats_one_scheme() {
    let model = square_chain(3, 16, 2);
    let space = SearchSpace::from_ranks(&model, vec![vec![4, 4]; 3]).unwrap();
    let eval = TableEvaluator::from_fn(&space.options, |_| 12.5);
    let cfg = config(space, 1.1, 30, 4);
    let out = run_search(&cfg, &model, &eval, None).unwrap();
    assert!(out.records.iter().all(|r| r.scheme == vec![4, 4, 4] && r.error == Some(12.5)));
    assert_eq!(eval.calls.get(), 1, "duplicates are served from the memo");
    assert_eq!(out.explored.len(), 30, "memo hits still enter the explored set");
}

#[test]
fn zero_steps_leave_the_controller_untouched() {
    let (model, space, eval) = small_problem(1);
    let cfg = config(space, 1.2, 0, 5);
    let out = run_search(&cfg, &model, &eval, None).unwrap();
    assert!(out.records.is_empty() && out.explored.is_empty());
    assert_eq!(out.controller.to_bytes().unwrap(), cfg.init_controller().unwrap().to_bytes().unwrap());
}

#[test]
fn three_by_three_search_finds_the_exhaustive_optimum() {
    let (model, space, eval) = small_problem(11);
    let mut cfg = config(space, 1.2, 500, 11);
    cfg.controller.hidden = 100;
    cfg.controller.embed = 100;
    let optimum = exhaustive_best_reward(&model, &cfg, &eval);
    let out = run_search(&cfg, &model, &eval, None).unwrap();
    let best = out.records.iter().map(|r| r.reward).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, optimum);
}

#[test]
fn gate_soundness_over_full_logs() {
    for seed in 0..5 {
        let (model, space, eval) = small_problem(seed);
        let cfg = config(space, 1.6, 200, seed);
        let out = run_search(&cfg, &model, &eval, None).unwrap();
        assert_eq!(out.records.len(), 200);
        assert!(out.explored.iter().all(|p| p.speedup >= 1.6));
        for r in &out.records {
            assert_eq!(r.rejected, r.speedup < 1.6);
            assert_eq!(r.rejected, r.error.is_none());
        }
        let accepted = out.records.iter().filter(|r| !r.rejected).count();
        assert_eq!(accepted, out.explored.len());
    }
}

#[test]
fn identical_runs_write_identical_logs() {
    let (model, space, eval) = small_problem(3);
    let cfg = config(space, 1.2, 120, 9);
    let mut first = Vec::new();
    let mut second = Vec::new();
    let a = run_search(&cfg, &model, &eval, Some(&mut first)).unwrap();
    let b = run_search(&cfg, &model, &eval, Some(&mut second)).unwrap();
    assert_eq!(masked(&a.records), masked(&b.records));
    assert_eq!(masked(&read_log(first.as_slice()).unwrap()), masked(&read_log(second.as_slice()).unwrap()));
    assert_eq!(a.controller.to_bytes().unwrap(), b.controller.to_bytes().unwrap());
}

#[test]
fn replay_reconstructs_the_final_controller() {
    let (model, space, eval) = small_problem(4);
    let cfg = config(space, 1.2, 150, 21);
    let mut log = Vec::new();
    let out = run_search(&cfg, &model, &eval, Some(&mut log)).unwrap();
    let records = read_log(log.as_slice()).unwrap();
    assert_eq!(records.len(), 150);
    let replayed = replay_log(&cfg, &model, &records).unwrap();
    assert_eq!(replayed.to_bytes().unwrap(), out.controller.to_bytes().unwrap());
}

#[test]
fn replay_rejects_a_foreign_log() {
    let (model, space, eval) = small_problem(4);
    let cfg = config(space.clone(), 1.2, 50, 21);
    let out = run_search(&cfg, &model, &eval, None).unwrap();
    let other = config(space, 1.2, 50, 22);
    assert!(matches!(replay_log(&other, &model, &out.records), Err(Error::ContractViolation(_))));
}

#[test]
fn evaluator_failure_leaves_state_unchanged_and_resumes() {
    let (model, space, eval) = small_problem(5);
    let cfg = config(space, 1.2, 80, 8);
    let reference = run_search(&cfg, &model, &eval, None).unwrap();

    let flaky = FlakyEvaluator { inner: &eval, fail_on: 3, calls: Default::default() };
    let mut search = Search::new(cfg.clone(), &model, &flaky).unwrap();
    let mut records = Vec::new();
    let err = loop {
        match search.step() {
            Ok(r) => records.push(r),
            Err(e) => break e,
        }
    };
    let failed_step = records.len() as u64;
    assert_eq!(search.state.step, failed_step);
    assert!(err.to_string().contains(&format!("step {failed_step}")), "{err}");
    assert!(matches!(err.root(), Error::EvalTimeout(_)));

    // Retrying in place continues exactly as if nothing had happened.
    records.extend(search.run(None).unwrap());
    assert_eq!(masked(&records), masked(&reference.records));
    assert_eq!(search.state.controller.to_bytes().unwrap(), reference.controller.to_bytes().unwrap());
}

#[test]
fn resume_from_a_partial_log() {
    let (model, space, eval) = small_problem(6);
    let cfg = config(space, 1.2, 100, 13);
    let reference = run_search(&cfg, &model, &eval, None).unwrap();

    let mut search = Search::new(cfg.clone(), &model, &eval).unwrap();
    search.replay(&reference.records[..60]).unwrap();
    let tail = search.run(None).unwrap();
    assert_eq!(masked(&tail), masked(&reference.records[60..]));
    assert_eq!(search.state.explored, reference.explored);
}

#[test]
fn learning_progress_on_a_bandit_surface() {
    // Each layer has one clearly best option; everything else costs error.
    let model = square_chain(3, 16, 7);
    let options = vec![vec![7, 6, 5, 4]; 3];
    let space = SearchSpace::from_ranks(&model, options.clone()).unwrap();
    let mut passed = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let best: Vec<usize> = (0..3).map(|_| options[0][rng.gen_range(0..4)]).collect();
        let eval = TableEvaluator::from_fn(&space.options, |s| {
            20.0 + 1.5 * s.iter().zip(&best).filter(|(a, b)| a != b).count() as f64
        });
        let mut cfg = config(space.clone(), 1.05, 300, seed);
        cfg.controller.learning_rate = 1e-2;
        let out = run_search(&cfg, &model, &eval, None).unwrap();
        let mean = |r: &[StepRecord]| r.iter().map(|x| x.reward).sum::<f64>() / r.len() as f64;
        if mean(&out.records[250..]) > mean(&out.records[..50]) {
            passed += 1;
        }
    }
    assert!(passed >= 9, "only {passed}/10 seeds improved");
}

#[test]
fn batched_updates_and_reward_baseline() {
    let (model, space, eval) = small_problem(8);
    let mut cfg = config(space, 1.2, 40, 2);
    cfg.controller.batch_size = 4;
    cfg.controller.baseline_decay = Some(0.9);
    let out = run_search(&cfg, &model, &eval, None).unwrap();
    assert_eq!(out.controller.step(), 10);

    cfg.controller.batch_size = 0;
    assert!(run_search(&cfg, &model, &eval, None).is_err());
}

#[test]
fn top_k_over_a_real_run() {
    let (model, space, eval) = small_problem(9);
    let cfg = config(space, 1.2, 200, 1);
    let out = run_search(&cfg, &model, &eval, None).unwrap();
    let top = top_k(&out.explored, 5).unwrap();
    let best = out.explored.iter().map(|p| p.error).fold(f64::INFINITY, f64::min);
    assert_eq!(top[0].error, best);
    assert!(top.windows(2).all(|w| w[0].error <= w[1].error));
    let distinct: std::collections::HashSet<_> = top.iter().map(|p| p.scheme.clone()).collect();
    assert_eq!(distinct.len(), top.len());
    assert_eq!(explored_from_log(&out.records), out.explored, "the log alone rebuilds the explored set");
}

#[test]
fn select_best_prefers_the_holdout_ranking() {
    let model = square_chain(3, 16, 3);
    let candidates = vec![Scheme::new(vec![6, 6, 6]), Scheme::new(vec![3, 3, 3]), Scheme::new(vec![6, 3, 0])];
    let holdout = TableEvaluator::new(HashMap::from([(vec![6, 6, 6], 9.0), (vec![3, 3, 3], 4.0), (vec![6, 3, 0], 7.0)]));
    let sel = select_best(&model, &candidates, &holdout).unwrap();
    assert_eq!(sel.best, candidates[1]);
    assert_eq!(sel.error, 4.0);

    let single = select_best(&model, &candidates[..1], &holdout).unwrap();
    assert_eq!((single.best, single.error), (candidates[0].clone(), 9.0));

    // A candidate the holdout cannot score is skipped, not fatal.
    let partial = TableEvaluator::new(HashMap::from([(vec![6, 3, 0], 7.0)]));
    let sel = select_best(&model, &candidates, &partial).unwrap();
    assert_eq!(sel.best, candidates[2]);
    assert_eq!(sel.candidates.iter().filter(|c| c.failure.is_some()).count(), 2);

    let none = TableEvaluator::new(HashMap::new());
    assert!(matches!(select_best(&model, &candidates, &none), Err(Error::NoFeasiblePoint)));
}
