//! Unit-level nonparametric bootstrap.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 500,
            seed: 0,
        }
    }
}

/// `n` row indices drawn with replacement for replicate `b`.
pub fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = seed::rng(seed, stream::BOOTSTRAP, b as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Runs `statistic` on every resample and returns the successful values in
/// replicate order. Replicates whose statistic fails (e.g. a resample with
/// no treated unit) are dropped.
pub fn replicate<F>(cfg: &BootstrapConfig, n: usize, statistic: F) -> Vec<f64>
where
    F: Fn(&[usize], usize) -> Option<f64> + Sync,
{
    (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let idx = resample_indices(n, cfg.seed, b);
            statistic(&idx, b).filter(|v| v.is_finite())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}
