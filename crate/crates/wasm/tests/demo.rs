use rankpilot::reward::{reward_aggressive, reward_conservative, RewardMode};
use rankpilot_wasm::demo::{reward_curves, search_view, truncation_view};

#[test]
fn truncation_view_is_consistent() {
    let v = truncation_view(48, 32, 6.0, 3, 0.8).unwrap();
    assert_eq!(v.sigma.len(), 32);
    assert!(v.sigma.windows(2).all(|w| w[0] >= w[1]));
    // The chosen rank is the first prefix reaching the energy.
    assert!(v.cumulative[v.rank - 1] >= 0.8);
    assert!(v.rank == 1 || v.cumulative[v.rank - 2] < 0.8);
    // Eckart–Young: the reconstruction error is the discarded spectrum.
    let tail: f64 = v.sigma[v.rank..].iter().map(|s| s * s).sum::<f64>().sqrt();
    let all: f64 = v.sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
    assert!((v.relative_error - tail / all).abs() < 1e-9);
    assert_eq!(v.speedup, (48.0 * 32.0) / (v.rank as f64 * 80.0));
    assert_eq!(v.economical, v.rank * 80 < 48 * 32);

    let full = truncation_view(48, 32, 6.0, 3, 1.0).unwrap();
    assert!(full.relative_error < 1e-9);
    assert!(truncation_view(0, 4, 1.0, 0, 0.5).is_err());
    assert!(truncation_view(4, 4, 1.0, 0, 0.0).is_err());
}

#[test]
fn reward_curves_follow_the_formulas() {
    let c = reward_curves(8.0, 1.5, RewardMode::Conservative, 11).unwrap();
    assert_eq!(c.reward.len(), 11);
    for [w, r] in &c.reward {
        assert_eq!(*r, reward_conservative(*w, 8.0));
    }
    assert_eq!(c.punish.first().unwrap(), &[1.0, -60.0]);
    assert_eq!(c.punish.last().unwrap(), &[1.5, -10.0]);
    let a = reward_curves(8.0, 1.5, RewardMode::Aggressive, 5).unwrap();
    assert_eq!(a.reward[0], [0.0, reward_aggressive(0.0, 8.0).unwrap()]);
    assert!(reward_curves(0.0, 1.5, RewardMode::Conservative, 5).is_err());
}

#[test]
fn search_view_beats_the_manual_curve() {
    let v = search_view(2.0, 400, 1, RewardMode::Aggressive).unwrap();
    assert_eq!(v.points.len(), 400);
    assert!(v.baseline_error > 0.0);
    let best = v.best.as_ref().expect("some scheme reaches the target");
    assert!(best.speedup >= 2.0);
    // The equal-energy scheme with the least error among those at least as fast as `best`.
    let manual = v.manual.iter().filter(|m| m.speedup >= best.speedup).map(|m| m.error).fold(f64::INFINITY, f64::min);
    assert!(best.error <= manual, "search {} vs manual {}", best.error, manual);
    assert_eq!(v, search_view(2.0, 400, 1, RewardMode::Aggressive).unwrap(), "deterministic per seed");
}
