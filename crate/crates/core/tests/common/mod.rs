#![allow(dead_code)]

use interference_core::sim::{DgpParams, GraphParams, RolloutParams, SimConfig, WeightMode};

/// Small two-stage experiment used across the integration tests.
pub fn small_config(seed: u64) -> SimConfig {
    SimConfig {
        graph: GraphParams {
            n_eligible: 60,
            n_ineligible: 10,
            n_connected: 25,
            avg_degree: 2.5,
            weight_mode: WeightMode::Unit,
        },
        dgp: DgpParams {
            beta: 1.0,
            gamma: 0.5,
            rho: 0.3,
            sigma: 1.0,
            baseline_mean: 5.0,
            baseline_sd: 1.0,
        },
        rollout: RolloutParams {
            stage_boundaries: vec![4, 7],
            stage_probabilities: vec![0.3, 0.6],
        },
        n_periods: 10,
        seed,
        pre_period_end: None,
    }
}

pub fn dgp(beta: f64, gamma: f64, rho: f64, sigma: f64) -> DgpParams {
    DgpParams {
        beta,
        gamma,
        rho,
        sigma,
        baseline_mean: 5.0,
        baseline_sd: 1.0,
    }
}
