//! Total treatment effect estimation for experiments on bipartite networks.
//!
//! Three estimators share one dataset type:
//!
//! - [`basic`]: a pre/post regression that ignores interference;
//! - [`network`]: an exposure-mapping regression on the observed graph;
//! - [`cmp`]: causal message passing, which learns the population's state
//!   evolution from outcomes over time and never reads the graph.
//!
//! [`sim`] generates experiments with a known ground truth and [`harness`]
//! compares the estimators on them.

pub mod basic;
pub mod bootstrap;
pub mod cmp;
pub mod data;
pub mod error;
pub mod harness;
pub mod io;
pub mod network;
pub mod regress;
pub mod seed;
pub mod sim;
pub mod validate;

pub use bootstrap::BootstrapConfig;
pub use data::{
    AllocationScenario, BipartiteGraph, Design, Edge, EffectEstimate, ExperimentDataset, Method, OutcomePanel,
    TreatmentPanel, TreatmentUnit, UnitCovariates,
};
pub use error::{Error, Result};
pub use validate::Violation;
