//! Fixtures shared by the benchmarks.

use htl_core::{make_source, make_target, ScenarioConfig, SolverConfig, SourceHypothesis, SourceTrainer, Split};
use htl_core::Dataset;

/// Target training sample of size `n` and a trained source scorer, from the default scenario.
pub fn scenario_fixture(n: usize, theta: f64, seed: u64) -> (Dataset, SourceHypothesis) {
    let sc = ScenarioConfig {
        n_source: 2_000,
        n_target: n,
        n_test: 10,
        theta,
        seed,
        ..ScenarioConfig::default()
    };
    let source = SourceTrainer::default()
        .train(&make_source(&sc).expect("source sample"), &SolverConfig::default())
        .expect("source training");
    (make_target(&sc, Split::Train).expect("target sample"), source)
}
