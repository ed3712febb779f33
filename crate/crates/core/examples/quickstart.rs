//! Builds the toy profile, runs a short search at a 1.2x speedup target and re-checks the best
//! schemes on the test split.
//!
//! `cargo run --release -p rankpilot --example quickstart`

use rankpilot::evaluator::toy::{build_toy_profile, CONSERVATIVE_TARGET, SEARCH_ENERGIES};
use rankpilot::reward::{RewardConfig, RewardMode};
use rankpilot::search::{run_search, select_best, top_k, SearchConfig};
use rankpilot::space::build_space;

fn main() -> rankpilot::Result<()> {
    let profile = build_toy_profile(0)?;
    println!("toy model: dev error {:.2}, test error {:.2}", profile.baseline_error, profile.test_error);

    let energies = vec![SEARCH_ENERGIES.to_vec(); profile.model.num_searchable()];
    let space = build_space(&profile.model, &energies)?;
    let reward = RewardConfig::new(RewardMode::Conservative, profile.baseline_error, CONSERVATIVE_TARGET)?;
    let config = SearchConfig::new(space, reward, 1000, 0);
    let outcome = run_search(&config, &profile.model, &profile.dev, None)?;

    let best = top_k(&outcome.explored, 5)?;
    for p in &best {
        println!("step {:>4}  speedup {:.3}  dev error {:.2}  ranks {:?}", p.step, p.speedup, p.error, p.scheme.ranks());
    }
    let schemes: Vec<_> = best.into_iter().map(|p| p.scheme).collect();
    let selection = select_best(&profile.model, &schemes, &profile.test)?;
    println!("selected {:?} with test error {:.2}", selection.best.ranks(), selection.error);
    Ok(())
}
