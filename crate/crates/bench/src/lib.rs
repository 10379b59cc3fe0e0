//! Fixtures shared by the criterion benches under `benches/`.

use interference_core::harness::{preset, ScenarioConfig};
use interference_core::sim::{simulate_experiment, SimulatedExperiment};

/// The `upward_bias` preset scaled to `n_eligible` treatment units, with a
/// lighter bootstrap so one iteration stays short.
pub fn scenario(n_eligible: usize) -> ScenarioConfig {
    let mut s = preset("upward_bias").expect("preset exists");
    let scale = n_eligible as f64 / s.sim.graph.n_eligible as f64;
    s.sim.graph.n_eligible = n_eligible;
    s.sim.graph.n_ineligible = ((s.sim.graph.n_ineligible as f64 * scale).round() as usize).max(1);
    s.sim.graph.n_connected = ((s.sim.graph.n_connected as f64 * scale).round() as usize).max(2);
    s.estimators.bootstrap_replicates = 20;
    s
}

pub fn experiment(n_eligible: usize) -> SimulatedExperiment {
    simulate_experiment(&scenario(n_eligible).sim).expect("preset simulates")
}
