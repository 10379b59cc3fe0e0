mod common;

use std::fs;
use std::path::Path;

use interference_core::io::{load_dataset, save_dataset};
use interference_core::sim::{simulate_experiment, WeightMode};
use interference_core::validate::validate_dataset;
use interference_core::{Edge, ExperimentDataset};
use proptest::prelude::*;

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn simulated(seed: u64, lognormal: bool) -> ExperimentDataset {
    let mut cfg = common::small_config(seed);
    if lognormal {
        cfg.graph.weight_mode = WeightMode::LogNormal { mu: 0.0, sd: 0.5 };
    }
    simulate_experiment(&cfg).unwrap().dataset
}

/// Applies mutation `k` to a valid dataset; every mutation breaks exactly
/// one invariant.
fn mutate(d: &mut ExperimentDataset, k: usize) {
    let t = d.n_periods();
    match k {
        0 => {
            let row = (0..d.n_units()).find(|&i| d.treatments.w(i, t) == 1).unwrap();
            d.treatments.set(row, t, 0);
            if d.treatments.w(row, t - 1) == 0 {
                d.treatments.set(row, t - 1, 1);
            }
        }
        1 => d.treatments.set(0, 1, 2),
        2 => d.outcomes.set(1, 2, f64::NAN),
        3 => d.covariates.as_mut().unwrap().values[0][0] = f64::INFINITY,
        4 => d.covariates.as_mut().unwrap().values[2].push(1.0),
        5 => {
            let g = d.graph.as_mut().unwrap();
            let e = g.edges[0];
            g.edges.push(e);
        }
        6 => {
            let g = d.graph.as_mut().unwrap();
            let missing = g.connected_units.iter().max().unwrap() + 1;
            g.edges.push(Edge { treatment: 1, connected: missing, weight: 1.0 });
        }
        7 => d.graph.as_mut().unwrap().edges[0].weight = -1.0,
        8 => d.pre_period_end = t,
        9 => {
            let g = d.graph.as_mut().unwrap();
            g.treatment_units.retain(|u| u.id != 2);
            g.edges.retain(|e| e.treatment != 2);
        }
        _ => unreachable!(),
    }
}

#[test]
fn save_twice_is_byte_identical() {
    let d = simulated(3, true);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save_dataset(&d, a.path()).unwrap();
    save_dataset(&d, b.path()).unwrap();
    assert_eq!(read_all(a.path()), read_all(b.path()));
}

#[test]
fn dataset_without_graph_round_trips() {
    let mut d = simulated(4, false);
    d.graph = None;
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&d, dir.path()).unwrap();
    assert!(!dir.path().join("graph.csv").exists());
    assert_eq!(load_dataset(dir.path()).unwrap(), d);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn save_then_load_is_identity(seed in any::<u64>(), lognormal in any::<bool>(), drop_cov in any::<bool>()) {
        let mut d = simulated(seed, lognormal);
        if drop_cov {
            d.covariates = None;
        }
        prop_assert!(validate_dataset(&d).is_empty());
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        prop_assert_eq!(load_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn any_single_mutation_is_flagged(seed in 0u64..1000, k in 0usize..10) {
        let mut d = simulated(seed, false);
        prop_assert!(validate_dataset(&d).is_empty());
        mutate(&mut d, k);
        prop_assert!(!validate_dataset(&d).is_empty(), "mutation {} passed validation", k);
    }
}
