//! Synthetic bipartite experiments with a known total treatment effect.
//!
//! Each edge `(j, c)` carries an AR(1) outcome around the connected unit's
//! baseline `b_c`:
//!
//! ```text
//! y_{jc,0} = b_c
//! y_{jc,t} = (1 − ρ)·b_c + ρ·y_{jc,t−1} + β·W_t^j + γ·τ_c(t) + ε
//! ```
//!
//! where `τ_c(t)` is the fraction of `c`'s treatment-side neighbours treated
//! at `t` and `ε ~ N(0, σ²)`. A treatment unit's outcome is the ω-weighted sum
//! over its edges. Noise draws never depend on the assignment, so two runs
//! with the same seed share random numbers exactly.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    AllocationScenario, BipartiteGraph, Design, Edge, ExperimentDataset, OutcomePanel,
    TreatmentPanel, TreatmentUnit, UnitCovariates,
};
use crate::error::{Error, Result};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    /// Direct edge-level effect of the unit's own treatment.
    pub beta: f64,
    /// Spillover coefficient on the treated fraction of a connected unit's neighbours.
    pub gamma: f64,
    /// Carryover, `|rho| < 1`.
    pub rho: f64,
    pub sigma: f64,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
}

impl DgpParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.beta, self.gamma, self.rho, self.sigma, self.baseline_mean, self.baseline_sd]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("DGP parameters must be finite".into()));
        }
        if self.rho.abs() >= 1.0 {
            return Err(Error::Config(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if self.sigma < 0.0 || self.baseline_sd < 0.0 {
            return Err(Error::Config("sigma and baseline_sd must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Unit,
    #[serde(rename = "lognormal")]
    LogNormal { mu: f64, sd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub n_eligible: usize,
    #[serde(default)]
    pub n_ineligible: usize,
    pub n_connected: usize,
    /// Poisson rate of the treatment-unit degree before truncation to `[1, n_connected]`.
    pub avg_degree: f64,
    #[serde(default)]
    pub weight_mode: WeightMode,
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_eligible == 0 || self.n_connected == 0 {
            return Err(Error::Config("n_eligible and n_connected must be positive".into()));
        }
        if !(self.avg_degree > 0.0 && self.avg_degree <= self.n_connected as f64) {
            return Err(Error::Config(format!(
                "avg_degree must lie in (0, n_connected = {}], got {}",
                self.n_connected, self.avg_degree
            )));
        }
        if let WeightMode::LogNormal { mu, sd } = self.weight_mode {
            if !(mu.is_finite() && sd.is_finite() && sd >= 0.0) {
                return Err(Error::Config("lognormal weights need finite mu and sd >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Stage `s` covers periods `stage_boundaries[s] .. stage_boundaries[s + 1]`;
/// periods before the first boundary are untreated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutParams {
    pub stage_boundaries: Vec<usize>,
    pub stage_probabilities: Vec<f64>,
}

impl RolloutParams {
    pub fn validate(&self, n_periods: usize) -> Result<()> {
        if self.stage_boundaries.len() != self.stage_probabilities.len() {
            return Err(Error::Config(
                "stage_boundaries and stage_probabilities differ in length".into(),
            ));
        }
        if self.stage_boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("stage_boundaries must be strictly increasing".into()));
        }
        if self.stage_boundaries.iter().any(|&b| b == 0 || b > n_periods) {
            return Err(Error::Config(format!("stage boundaries must lie in 1..={n_periods}")));
        }
        if self.stage_probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("stage probabilities must lie in [0, 1]".into()));
        }
        if self.stage_probabilities.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("stage probabilities must be nondecreasing".into()));
        }
        Ok(())
    }

    /// Treatment probability in effect at period `t`.
    pub fn probability_at(&self, t: usize) -> f64 {
        self.stage_boundaries
            .iter()
            .rposition(|&b| b <= t)
            .map_or(0.0, |s| self.stage_probabilities[s])
    }
}

/// Random sparse bipartite graph. Eligible units get ids `1..=n_eligible`,
/// ineligible ones follow; connected units are `1..=n_connected`.
pub fn generate_graph(gp: &GraphParams, seed: u64) -> Result<BipartiteGraph> {
    gp.validate()?;
    let mut rng = seed::rng(seed, stream::GRAPH, 0);
    let mut wrng = seed::rng(seed, stream::WEIGHTS, 0);
    let poisson = Poisson::new(gp.avg_degree)
        .map_err(|e| Error::Config(format!("avg_degree: {e}")))?;
    let lognormal = match gp.weight_mode {
        WeightMode::LogNormal { mu, sd } => {
            Some(LogNormal::new(mu, sd).map_err(|e| Error::Config(format!("weights: {e}")))?)
        }
        WeightMode::Unit => None,
    };
    let n_total = gp.n_eligible + gp.n_ineligible;
    let mut edges = Vec::new();
    for j in 0..n_total {
        let degree = truncated_poisson(&poisson, gp.n_connected, &mut rng);
        let mut chosen: Vec<usize> = index::sample(&mut rng, gp.n_connected, degree).into_vec();
        chosen.sort_unstable();
        for c in chosen {
            let weight = lognormal.as_ref().map_or(1.0, |d| d.sample(&mut wrng));
            edges.push(Edge {
                treatment: j as u32 + 1,
                connected: c as u32 + 1,
                weight,
            });
        }
    }
    Ok(BipartiteGraph {
        treatment_units: (0..n_total)
            .map(|j| TreatmentUnit {
                id: j as u32 + 1,
                eligible: j < gp.n_eligible,
            })
            .collect(),
        connected_units: (1..=gp.n_connected as u32).collect(),
        edges,
    })
}

// Rejection sampling from Poisson conditioned on [1, max].
fn truncated_poisson<R: Rng>(poisson: &Poisson<f64>, max: usize, rng: &mut R) -> usize {
    for _ in 0..10_000 {
        let k = poisson.sample(rng) as usize;
        if (1..=max).contains(&k) {
            return k;
        }
    }
    1
}

/// Staggered design: unit `i` draws `u_i ~ U(0, 1)` once and is treated at
/// period `t` iff `u_i < p(t)`.
pub fn assign_staggered_rollout(
    n_units: usize,
    n_periods: usize,
    rp: &RolloutParams,
    seed: u64,
) -> Result<TreatmentPanel> {
    rp.validate(n_periods)?;
    let mut rng = seed::rng(seed, stream::ROLLOUT, 0);
    let u: Vec<f64> = (0..n_units).map(|_| rng.random::<f64>()).collect();
    let mut panel = TreatmentPanel::zeros(n_units, n_periods, Design::Staggered);
    for t in 1..=n_periods {
        let p = rp.probability_at(t);
        for (i, &ui) in u.iter().enumerate() {
            if ui < p {
                panel.set(i, t, 1);
            }
        }
    }
    Ok(panel)
}

/// Extends an eligible-unit panel to every treatment unit of `g` (ineligible rows zero).
pub fn pad_assignment(g: &BipartiteGraph, eligible: &TreatmentPanel) -> Result<TreatmentPanel> {
    let n_periods = eligible.n_periods;
    let mut full = TreatmentPanel::zeros(g.treatment_units.len(), n_periods, eligible.design);
    for (pos, u) in g.treatment_units.iter().enumerate() {
        if !u.eligible {
            continue;
        }
        let row = u.id as usize - 1;
        if row >= eligible.n_units {
            return Err(Error::Dimension(format!(
                "eligible unit {} has no row in a {}-row panel",
                u.id, eligible.n_units
            )));
        }
        full.assignments[pos * n_periods..(pos + 1) * n_periods].copy_from_slice(eligible.row(row));
    }
    Ok(full)
}

/// Runs the edge-level recursion. `w` has one row per treatment unit of `g`
/// (in `g.treatment_units` order); returns the eligible rows in id order.
pub fn simulate_outcomes(
    g: &BipartiteGraph,
    w: &TreatmentPanel,
    p: &DgpParams,
    seed: u64,
) -> Result<OutcomePanel> {
    p.validate()?;
    let gi = g.index()?;
    if w.n_units != g.treatment_units.len() {
        return Err(Error::Dimension(format!(
            "assignment has {} rows, graph has {} treatment units",
            w.n_units,
            g.treatment_units.len()
        )));
    }
    let n_periods = w.n_periods;
    let mut rng = seed::rng(seed, stream::OUTCOMES, 0);
    let baselines: Vec<f64> = (0..g.connected_units.len())
        .map(|_| p.baseline_mean + p.baseline_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let n_units = g.treatment_units.len();
    let mut y_unit = vec![0.0; n_units * (n_periods + 1)];
    let mut y_edge: Vec<Vec<f64>> = gi
        .unit_edges
        .iter()
        .map(|edges| edges.iter().map(|&(c, _)| baselines[c]).collect())
        .collect();
    for (j, edges) in gi.unit_edges.iter().enumerate() {
        y_unit[j * (n_periods + 1)] = edges.iter().map(|&(c, omega)| omega * baselines[c]).sum();
    }

    let mut tau = vec![0.0; g.connected_units.len()];
    for t in 1..=n_periods {
        for (c, members) in gi.members.iter().enumerate() {
            tau[c] = if members.is_empty() {
                0.0
            } else {
                members.iter().map(|&k| f64::from(w.w(k, t))).sum::<f64>() / members.len() as f64
            };
        }
        for (j, edges) in gi.unit_edges.iter().enumerate() {
            let own = f64::from(w.w(j, t));
            let mut total = 0.0;
            for (e, &(c, omega)) in edges.iter().enumerate() {
                let noise = p.sigma * rng.sample::<f64, _>(StandardNormal);
                let prev = y_edge[j][e];
                let y = (1.0 - p.rho) * baselines[c] + p.rho * prev + p.beta * own + p.gamma * tau[c] + noise;
                y_edge[j][e] = y;
                total += omega * y;
            }
            y_unit[j * (n_periods + 1) + t] = total;
        }
    }

    let n_eligible = g.n_eligible();
    let mut out = OutcomePanel::zeros(n_eligible, n_periods + 1);
    for id in 1..=n_eligible as u32 {
        let pos = gi.position(id).ok_or(Error::UnitNotInGraph(id))?;
        if !gi.is_eligible(pos) {
            return Err(Error::Dimension(format!("unit {id} is not eligible")));
        }
        let row = id as usize - 1;
        for t in 0..=n_periods {
            out.set(row, t, y_unit[pos * (n_periods + 1) + t]);
        }
    }
    Ok(out)
}

/// Full-population assignment for an allocation: every eligible unit at the
/// allocation's value, ineligible units in control.
pub fn allocation_assignment(g: &BipartiteGraph, allocation: AllocationScenario, n_periods: usize) -> TreatmentPanel {
    let mut w = TreatmentPanel::zeros(g.treatment_units.len(), n_periods, Design::Fixed);
    for (pos, u) in g.treatment_units.iter().enumerate() {
        if u.eligible {
            for t in 1..=n_periods {
                w.set(pos, t, allocation.value());
            }
        }
    }
    w
}

/// Mean over eligible units of `Y_T(𝟏) − Y_T(𝟎)`, averaged over `n_reps`
/// replicates; each replicate runs both allocations on the same random numbers.
pub fn ground_truth_tte(g: &BipartiteGraph, p: &DgpParams, n_periods: usize, seed: u64, n_reps: usize) -> Result<f64> {
    if n_reps == 0 {
        return Err(Error::Config("ground truth needs n_reps >= 1".into()));
    }
    if n_periods == 0 {
        return Err(Error::Config("ground truth needs T >= 1".into()));
    }
    let treated = allocation_assignment(g, AllocationScenario::AllTreated, n_periods);
    let control = allocation_assignment(g, AllocationScenario::AllControl, n_periods);
    let per_rep: Vec<f64> = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let s = seed::derive(seed, stream::TRUTH, r as u64);
            let y1 = simulate_outcomes(g, &treated, p, s)?;
            let y0 = simulate_outcomes(g, &control, p, s)?;
            let n = y1.n_units as f64;
            let diff: f64 = (0..y1.n_units).map(|i| y1.y(i, n_periods) - y0.y(i, n_periods)).sum();
            Ok(diff / n)
        })
        .collect::<Result<_>>()?;
    Ok(per_rep.iter().sum::<f64>() / n_reps as f64)
}

/// Everything needed to simulate one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub graph: GraphParams,
    pub dgp: DgpParams,
    pub rollout: RolloutParams,
    #[serde(rename = "T")]
    pub n_periods: usize,
    pub seed: u64,
    /// Defaults to the period before the first rollout stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_period_end: Option<usize>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.dgp.validate()?;
        if self.n_periods == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        self.rollout.validate(self.n_periods)?;
        let pre = self.pre_period_end();
        if pre >= self.n_periods {
            return Err(Error::Config(format!("pre_period_end {pre} must be < T = {}", self.n_periods)));
        }
        Ok(())
    }

    pub fn pre_period_end(&self) -> usize {
        self.pre_period_end.unwrap_or_else(|| match self.rollout.stage_boundaries.first() {
            Some(&b) => b - 1,
            None => self.n_periods / 2,
        })
    }
}

/// A simulated dataset together with the pieces estimators never see.
#[derive(Debug, Clone)]
pub struct SimulatedExperiment {
    pub dataset: ExperimentDataset,
    /// Assignment over every treatment unit, ineligible rows included.
    pub full_assignment: TreatmentPanel,
}

impl SimulatedExperiment {
    pub fn graph(&self) -> &BipartiteGraph {
        self.dataset.graph.as_ref().expect("simulated datasets carry their graph")
    }
}

/// Graph, staggered assignment and outcomes from one seed. The dataset
/// carries the graph and a single covariate `x_1`, the unit's degree.
pub fn simulate_experiment(cfg: &SimConfig) -> Result<SimulatedExperiment> {
    cfg.validate()?;
    let graph = generate_graph(&cfg.graph, cfg.seed)?;
    let eligible = assign_staggered_rollout(cfg.graph.n_eligible, cfg.n_periods, &cfg.rollout, cfg.seed)?;
    let full = pad_assignment(&graph, &eligible)?;
    let outcomes = simulate_outcomes(&graph, &full, &cfg.dgp, cfg.seed)?;
    let gi = graph.index()?;
    let covariates = UnitCovariates {
        names: vec!["x_1".into()],
        values: (1..=cfg.graph.n_eligible as u32)
            .map(|id| vec![gi.position(id).map_or(0.0, |p| gi.degree(p) as f64)])
            .collect(),
    };
    Ok(SimulatedExperiment {
        dataset: ExperimentDataset {
            outcomes,
            treatments: eligible,
            graph: Some(graph),
            covariates: Some(covariates),
            pre_period_end: cfg.pre_period_end(),
        },
        full_assignment: full,
    })
}
