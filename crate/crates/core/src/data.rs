//! Domain types shared by the simulator and the estimators.
//!
//! Panel rows are eligible treatment units: row `i` holds unit id `i + 1`.
//! Treatment periods run `1..=T`, outcome periods `0..=T` (period 0 is the
//! untreated baseline).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreatmentUnit {
    pub id: u32,
    pub eligible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub treatment: u32,
    pub connected: u32,
    /// Edge weight ω, nonnegative.
    pub weight: f64,
}

/// Treatment units on one side, connected units on the other.
///
/// Eligible treatment units carry ids `1..=N`; ineligible ones follow from
/// `N + 1`. Connected units have their own id space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BipartiteGraph {
    pub treatment_units: Vec<TreatmentUnit>,
    pub connected_units: Vec<u32>,
    pub edges: Vec<Edge>,
}

impl BipartiteGraph {
    pub fn n_eligible(&self) -> usize {
        self.treatment_units.iter().filter(|u| u.eligible).count()
    }

    /// Sorts units and edges into the canonical order used on disk.
    pub fn canonicalize(&mut self) {
        self.treatment_units.sort_by_key(|u| u.id);
        self.connected_units.sort_unstable();
        self.edges.sort_by_key(|e| (e.treatment, e.connected));
    }

    /// Adjacency lists keyed by position in `treatment_units` / `connected_units`.
    pub fn index(&self) -> Result<GraphIndex> {
        let unit_pos: HashMap<u32, usize> = self
            .treatment_units
            .iter()
            .enumerate()
            .map(|(p, u)| (u.id, p))
            .collect();
        let conn_pos: HashMap<u32, usize> = self
            .connected_units
            .iter()
            .enumerate()
            .map(|(p, &c)| (c, p))
            .collect();
        let mut unit_edges = vec![Vec::new(); self.treatment_units.len()];
        let mut members = vec![Vec::new(); self.connected_units.len()];
        for e in &self.edges {
            let j = *unit_pos
                .get(&e.treatment)
                .ok_or(Error::UnitNotInGraph(e.treatment))?;
            let c = *conn_pos.get(&e.connected).ok_or_else(|| {
                Error::Dimension(format!("edge references missing connected unit {}", e.connected))
            })?;
            unit_edges[j].push((c, e.weight));
            members[c].push(j);
        }
        Ok(GraphIndex {
            unit_pos,
            eligible: self.treatment_units.iter().map(|u| u.eligible).collect(),
            unit_edges,
            members,
        })
    }
}

/// Positional adjacency view of a [`BipartiteGraph`].
#[derive(Debug, Clone)]
pub struct GraphIndex {
    unit_pos: HashMap<u32, usize>,
    eligible: Vec<bool>,
    /// For treatment unit position `j`: `(connected position, ω)` per edge (the set C_j).
    pub unit_edges: Vec<Vec<(usize, f64)>>,
    /// For connected position `c`: treatment unit positions (the set T_c).
    pub members: Vec<Vec<usize>>,
}

impl GraphIndex {
    pub fn position(&self, unit_id: u32) -> Option<usize> {
        self.unit_pos.get(&unit_id).copied()
    }

    pub fn is_eligible(&self, pos: usize) -> bool {
        self.eligible[pos]
    }

    pub fn n_treatment_units(&self) -> usize {
        self.eligible.len()
    }

    pub fn degree(&self, pos: usize) -> usize {
        self.unit_edges[pos].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Units start in control and, once treated, stay treated.
    Staggered,
    /// Each unit's assignment is constant over time.
    Fixed,
    /// No constraint on assignment paths.
    Free,
}

/// N×T binary assignment matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentPanel {
    pub n_units: usize,
    pub n_periods: usize,
    pub assignments: Vec<u8>,
    pub design: Design,
}

impl TreatmentPanel {
    pub fn zeros(n_units: usize, n_periods: usize, design: Design) -> Self {
        TreatmentPanel {
            n_units,
            n_periods,
            assignments: vec![0; n_units * n_periods],
            design,
        }
    }

    /// Assignment of panel row `row` in period `t ∈ 1..=T`.
    #[inline]
    pub fn w(&self, row: usize, t: usize) -> u8 {
        self.assignments[row * self.n_periods + t - 1]
    }

    #[inline]
    pub fn set(&mut self, row: usize, t: usize, value: u8) {
        self.assignments[row * self.n_periods + t - 1] = value;
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.assignments[row * self.n_periods..(row + 1) * self.n_periods]
    }

    /// Final-period assignment per row.
    pub fn final_assignment(&self) -> Vec<u8> {
        (0..self.n_units).map(|i| self.w(i, self.n_periods)).collect()
    }

    /// Fraction of rows treated in period `t ∈ 1..=T`.
    pub fn treated_fraction(&self, t: usize) -> f64 {
        if self.n_units == 0 {
            return 0.0;
        }
        let treated: usize = (0..self.n_units).map(|i| usize::from(self.w(i, t))).sum();
        treated as f64 / self.n_units as f64
    }

    /// First treated period of a row, `None` if never treated.
    pub fn adoption_period(&self, row: usize) -> Option<usize> {
        self.row(row).iter().position(|&w| w != 0).map(|p| p + 1)
    }
}

/// N×(T+1) outcome matrix, row-major, periods `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomePanel {
    pub n_units: usize,
    /// Number of stored periods, `T + 1`.
    pub n_periods: usize,
    pub outcomes: Vec<f64>,
}

impl OutcomePanel {
    pub fn zeros(n_units: usize, n_periods: usize) -> Self {
        OutcomePanel {
            n_units,
            n_periods,
            outcomes: vec![0.0; n_units * n_periods],
        }
    }

    #[inline]
    pub fn y(&self, row: usize, t: usize) -> f64 {
        self.outcomes[row * self.n_periods + t]
    }

    #[inline]
    pub fn set(&mut self, row: usize, t: usize, value: f64) {
        self.outcomes[row * self.n_periods + t] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.outcomes[row * self.n_periods..(row + 1) * self.n_periods]
    }

    pub fn column_mean(&self, t: usize) -> f64 {
        let sum: f64 = (0..self.n_units).map(|i| self.y(i, t)).sum();
        sum / self.n_units as f64
    }
}

/// Per-unit covariate vectors X_j for the eligible units, in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCovariates {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl UnitCovariates {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn select(&self, rows: &[usize]) -> UnitCovariates {
        UnitCovariates {
            names: self.names.clone(),
            values: rows.iter().map(|&r| self.values[r].clone()).collect(),
        }
    }
}

/// Everything an estimator consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDataset {
    pub outcomes: OutcomePanel,
    pub treatments: TreatmentPanel,
    pub graph: Option<BipartiteGraph>,
    pub covariates: Option<UnitCovariates>,
    /// Last period of the pre-treatment window; periods `0..=pre_period_end`.
    pub pre_period_end: usize,
}

impl ExperimentDataset {
    pub fn n_units(&self) -> usize {
        self.treatments.n_units
    }

    /// T, the last period index.
    pub fn n_periods(&self) -> usize {
        self.treatments.n_periods
    }

    /// Graph-free dataset built from the given rows, relabelled `1..=rows.len()`.
    /// Rows may repeat (bootstrap resamples).
    pub fn select_units(&self, rows: &[usize]) -> ExperimentDataset {
        let t_out = self.outcomes.n_periods;
        let t_w = self.treatments.n_periods;
        let mut outcomes = Vec::with_capacity(rows.len() * t_out);
        let mut assignments = Vec::with_capacity(rows.len() * t_w);
        for &r in rows {
            outcomes.extend_from_slice(self.outcomes.row(r));
            assignments.extend_from_slice(self.treatments.row(r));
        }
        ExperimentDataset {
            outcomes: OutcomePanel {
                n_units: rows.len(),
                n_periods: t_out,
                outcomes,
            },
            treatments: TreatmentPanel {
                n_units: rows.len(),
                n_periods: t_w,
                assignments,
                design: self.treatments.design,
            },
            graph: None,
            covariates: self.covariates.as_ref().map(|c| c.select(rows)),
            pre_period_end: self.pre_period_end,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Basic,
    NetworkAware,
    Cmp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Basic, Method::NetworkAware, Method::Cmp];

    pub fn label(self) -> &'static str {
        match self {
            Method::Basic => "Basic",
            Method::NetworkAware => "Network-Aware",
            Method::Cmp => "CMP",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Method::Basic),
            "network" | "network_aware" => Ok(Method::NetworkAware),
            "cmp" => Ok(Method::Cmp),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Point estimate with a 95% interval.
///
/// Invariants: `ci_low <= point <= ci_high` and
/// `significant_5pct == !(ci_low <= 0 <= ci_high)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: Method,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant_5pct: bool,
    pub n_bootstrap: usize,
    /// Standard deviation of the bootstrap replicates.
    pub bootstrap_se: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EffectEstimate {
    /// Percentile interval (2.5%, 97.5%) from bootstrap replicates, widened
    /// if needed so that it contains the point estimate.
    pub fn from_bootstrap(method: Method, point: f64, replicates: &[f64]) -> Self {
        let (lo, hi) = if replicates.is_empty() {
            (point, point)
        } else {
            let mut sorted = replicates.to_vec();
            sorted.sort_by(f64::total_cmp);
            (quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975))
        };
        let ci_low = lo.min(point);
        let ci_high = hi.max(point);
        EffectEstimate {
            method,
            point,
            ci_low,
            ci_high,
            significant_5pct: !(ci_low <= 0.0 && 0.0 <= ci_high),
            n_bootstrap: replicates.len(),
            bootstrap_se: std_dev(replicates),
            warnings: Vec::new(),
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// The all-treated (𝟏) and all-control (𝟎) allocations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationScenario {
    AllTreated,
    AllControl,
}

impl AllocationScenario {
    pub fn value(self) -> u8 {
        match self {
            AllocationScenario::AllTreated => 1,
            AllocationScenario::AllControl => 0,
        }
    }

    /// Constant panel over `n_units × n_periods`.
    pub fn panel(self, n_units: usize, n_periods: usize) -> TreatmentPanel {
        TreatmentPanel {
            n_units,
            n_periods,
            assignments: vec![self.value(); n_units * n_periods],
            design: Design::Fixed,
        }
    }
}
