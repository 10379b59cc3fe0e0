//! Causal message passing: learn how the population's outcome distribution
//! evolves from one period to the next given the treated fraction, then run
//! the learned map forward under the all-treated and all-control
//! allocations.
//!
//! Nothing here reads the dataset's graph.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{self, BootstrapConfig};
use crate::data::{AllocationScenario, EffectEstimate, ExperimentDataset, Method};
use crate::error::{Error, Result};
use crate::regress::{fit_learner, FittedModel, LearnerConfig, Matrix};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// 1 keeps only the mean; 2 adds the variance; k > 2 adds central
    /// moments up to order k.
    pub moment_order: usize,
    /// Include `m_t · p_{t+1}`.
    pub interaction: bool,
    /// Summarise `Y_t − Y_0` per unit instead of `Y_t`. Removes level
    /// differences between subpopulations when outcomes revert to a
    /// unit-specific baseline.
    pub center_on_baseline: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            moment_order: 2,
            interaction: true,
            center_on_baseline: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.moment_order == 0 {
            return Err(Error::Config("moment_order must be at least 1".into()));
        }
        Ok(())
    }

    /// Column names in feature order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["m".to_string()];
        if self.moment_order >= 2 {
            names.push("v".into());
        }
        names.push("p_next".into());
        if self.interaction {
            names.push("m_x_p_next".into());
        }
        for k in 3..=self.moment_order {
            names.push(format!("mu{k}"));
        }
        names
    }

    fn row(&self, m: f64, higher: &[f64], p_next: f64) -> Vec<f64> {
        let mut row = Vec::with_capacity(2 + self.moment_order + usize::from(self.interaction));
        row.push(m);
        if let Some(&v) = higher.first() {
            row.push(v);
        }
        row.push(p_next);
        if self.interaction {
            row.push(m * p_next);
        }
        row.extend(higher.iter().skip(1));
        row
    }
}

/// Summary of one period's outcome distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodStats {
    pub mean: f64,
    /// Central moments of order 2..=moment_order (population normalisation).
    pub higher: Vec<f64>,
}

/// Outcome summaries for periods `0..=T` and treated fractions for `1..=T`.
pub fn period_stats(d: &ExperimentDataset, cfg: &FeatureConfig) -> Result<(Vec<PeriodStats>, Vec<f64>)> {
    let n = d.n_units();
    if n == 0 {
        return Err(Error::Insufficient("dataset has no units".into()));
    }
    let t_max = d.n_periods();
    let mut stats = Vec::with_capacity(t_max + 1);
    let mut column = vec![0.0; n];
    for t in 0..=t_max {
        for (i, slot) in column.iter_mut().enumerate() {
            let base = if cfg.center_on_baseline { d.outcomes.y(i, 0) } else { 0.0 };
            *slot = d.outcomes.y(i, t) - base;
        }
        let mean = column.iter().sum::<f64>() / n as f64;
        let higher = (2..=cfg.moment_order)
            .map(|k| column.iter().map(|y| (y - mean).powi(k as i32)).sum::<f64>() / n as f64)
            .collect();
        stats.push(PeriodStats { mean, higher });
    }
    let fractions = (1..=t_max).map(|t| d.treatments.treated_fraction(t)).collect();
    Ok((stats, fractions))
}

/// Training table: one row per transition `t → t+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// `m_{t+1}` for each row.
    pub targets: Vec<f64>,
    /// `t` for each row.
    pub periods: Vec<usize>,
}

impl StateFeatures {
    fn empty(cfg: &FeatureConfig) -> Self {
        StateFeatures {
            names: cfg.names(),
            rows: Vec::new(),
            targets: Vec::new(),
            periods: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn append(&mut self, d: &ExperimentDataset, cfg: &FeatureConfig) -> Result<()> {
        let (stats, p) = period_stats(d, cfg)?;
        for t in 0..d.n_periods() {
            let row = cfg.row(stats[t].mean, &stats[t].higher, p[t]);
            if let Some(bad) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    period: t,
                    what: format!("feature {}", self.names[bad]),
                });
            }
            self.rows.push(row);
            self.targets.push(stats[t + 1].mean);
            self.periods.push(t);
        }
        Ok(())
    }
}

/// Transition table of a single dataset.
pub fn build_features(d: &ExperimentDataset, cfg: &FeatureConfig) -> Result<StateFeatures> {
    build_features_pooled(std::slice::from_ref(d), cfg)
}

/// Transition tables of several datasets stacked in order.
pub fn build_features_pooled(datasets: &[ExperimentDataset], cfg: &FeatureConfig) -> Result<StateFeatures> {
    cfg.validate()?;
    let mut out = StateFeatures::empty(cfg);
    for d in datasets {
        out.append(d, cfg)?;
    }
    if out.len() < 2 {
        return Err(Error::Insufficient(format!(
            "state evolution needs at least 2 transitions, got {}",
            out.len()
        )));
    }
    Ok(out)
}

/// Learned map from period-`t` state and `p_{t+1}` to `m_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEvolutionModel {
    pub features: FeatureConfig,
    pub names: Vec<String>,
    /// One map when time-homogeneous, otherwise one per transition.
    pub maps: Vec<FittedModel>,
    pub lambda: f64,
    pub time_homogeneous: bool,
    /// Higher moments fed to the recursion, held fixed at their last observed
    /// values.
    pub held_moments: Vec<f64>,
}

impl StateEvolutionModel {
    /// Predicted `m_{t+1}` from `m_t` and `p_{t+1}`.
    pub fn step(&self, t: usize, m: f64, p_next: f64) -> Result<f64> {
        let map = if self.time_homogeneous {
            &self.maps[0]
        } else {
            &self.maps[t.min(self.maps.len() - 1)]
        };
        let row = self.features.row(m, &self.held_moments, p_next);
        let x = Matrix::from_row_slice(1, row.len(), &row);
        Ok(map.predict(&x)?[0])
    }
}

fn design(f: &StateFeatures, rows: &[usize]) -> (Matrix, Vec<f64>) {
    let dim = f.names.len();
    let x = Matrix::from_fn(rows.len(), dim, |i, j| f.rows[rows[i]][j]);
    let y = rows.iter().map(|&r| f.targets[r]).collect();
    (x, y)
}

/// Penalty chosen on the pooled table.
pub fn select_lambda(f: &StateFeatures, learner: &LearnerConfig, seed: u64) -> Result<f64> {
    let all: Vec<usize> = (0..f.len()).collect();
    let (x, y) = design(f, &all);
    learner.select_lambda(&x, &y, seed)
}

/// Fits the state evolution at a fixed penalty. `held_moments` must have
/// `moment_order − 1` entries.
pub fn fit_state_evolution_with(
    f: &StateFeatures,
    cfg: &FeatureConfig,
    learner: &LearnerConfig,
    lambda: f64,
    time_homogeneous: bool,
    held_moments: Vec<f64>,
) -> Result<StateEvolutionModel> {
    if f.names != cfg.names() {
        return Err(Error::Dimension(format!(
            "feature table has columns {:?}, config expects {:?}",
            f.names,
            cfg.names()
        )));
    }
    if held_moments.len() + 1 != cfg.moment_order {
        return Err(Error::Dimension(format!(
            "{} held moment(s) for moment order {}",
            held_moments.len(),
            cfg.moment_order
        )));
    }
    if f.len() < 2 {
        return Err(Error::Insufficient("state evolution needs at least 2 rows".into()));
    }
    let maps = if time_homogeneous {
        let all: Vec<usize> = (0..f.len()).collect();
        let (x, y) = design(f, &all);
        vec![fit_learner(&learner.learner, &x, &y, lambda)?]
    } else {
        let n_maps = f.periods.iter().max().map_or(0, |&t| t + 1);
        (0..n_maps)
            .map(|t| {
                let rows: Vec<usize> = (0..f.len()).filter(|&r| f.periods[r] == t).collect();
                if rows.len() < 2 {
                    return Err(Error::Insufficient(format!(
                        "transition {t} has {} row(s); a per-period map needs at least 2",
                        rows.len()
                    )));
                }
                let (x, y) = design(f, &rows);
                fit_learner(&learner.learner, &x, &y, lambda)
            })
            .collect::<Result<_>>()?
    };
    Ok(StateEvolutionModel {
        features: *cfg,
        names: f.names.clone(),
        maps,
        lambda,
        time_homogeneous,
        held_moments,
    })
}

/// Fits a time-homogeneous map, choosing the penalty as configured. Higher
/// moments are held at the last row's values.
pub fn fit_state_evolution(
    f: &StateFeatures,
    cfg: &FeatureConfig,
    learner: &LearnerConfig,
    seed: u64,
) -> Result<StateEvolutionModel> {
    let lambda = select_lambda(f, learner, seed)?;
    let held = f.rows.last().map(|r| held_from_row(cfg, r)).unwrap_or_default();
    fit_state_evolution_with(f, cfg, learner, lambda, true, held)
}

fn held_from_row(cfg: &FeatureConfig, row: &[f64]) -> Vec<f64> {
    if cfg.moment_order < 2 {
        return Vec::new();
    }
    let tail = 2 + usize::from(cfg.interaction) + 1;
    let mut held = vec![row[1]];
    held.extend_from_slice(&row[tail..]);
    held
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualTrajectory {
    pub allocation: AllocationScenario,
    /// Predicted mean outcome for `t = 0..=T`.
    pub means: Vec<f64>,
}

impl CounterfactualTrajectory {
    pub fn final_mean(&self) -> f64 {
        *self.means.last().expect("trajectory holds at least m_0")
    }
}

/// Runs the map forward from the observed baseline mean `m0` with `p` fixed
/// at the allocation's value. With centred features the recursion starts at
/// zero and `m0` is added back.
pub fn counterfactual_evolution(
    model: &StateEvolutionModel,
    m0: f64,
    allocation: AllocationScenario,
    n_periods: usize,
) -> Result<CounterfactualTrajectory> {
    let p = f64::from(allocation.value());
    let offset = if model.features.center_on_baseline { m0 } else { 0.0 };
    let mut m = m0 - offset;
    let mut means = Vec::with_capacity(n_periods + 1);
    means.push(m0);
    for t in 0..n_periods {
        m = model.step(t, m, p)?;
        if !m.is_finite() {
            return Err(Error::NonFinite {
                period: t + 1,
                what: format!("counterfactual mean under {allocation:?}"),
            });
        }
        means.push(m + offset);
    }
    Ok(CounterfactualTrajectory { allocation, means })
}

/// One cell of the network bootstrap partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Subpopulation {
    /// Row indices into the source dataset, ascending.
    pub members: Vec<usize>,
    pub dataset: ExperimentDataset,
}

/// [`network_bootstrap_with`] using baseline quartiles.
pub fn network_bootstrap(d: &ExperimentDataset, k: usize, seed: u64) -> Result<Vec<Subpopulation>> {
    network_bootstrap_with(d, k, 4, seed)
}

/// Splits the units into `k` disjoint subpopulations. Units are stratified
/// by adoption period and by baseline-outcome quantile bin, shuffled within
/// each stratum, and dealt round-robin; the dealing position carries over
/// from one stratum to the next so that subpopulation sizes differ by at
/// most one overall.
pub fn network_bootstrap_with(d: &ExperimentDataset, k: usize, baseline_bins: usize, seed: u64) -> Result<Vec<Subpopulation>> {
    if k < 2 {
        return Err(Error::Config(format!("network bootstrap needs at least 2 subpopulations, got {k}")));
    }
    if baseline_bins == 0 {
        return Err(Error::Config("baseline_bins must be at least 1".into()));
    }
    let n = d.n_units();
    if n < 2 * k {
        return Err(Error::Insufficient(format!(
            "{n} unit(s) cannot fill {k} subpopulations of at least 2"
        )));
    }
    let mut by_baseline: Vec<usize> = (0..n).collect();
    by_baseline.sort_by(|&a, &b| d.outcomes.y(a, 0).total_cmp(&d.outcomes.y(b, 0)).then(a.cmp(&b)));
    let mut bin = vec![0usize; n];
    for (rank, &row) in by_baseline.iter().enumerate() {
        bin[row] = rank * baseline_bins / n;
    }
    let mut strata: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (row, &b) in bin.iter().enumerate() {
        let adoption = d.treatments.adoption_period(row).unwrap_or(0);
        strata.entry((adoption, b)).or_default().push(row);
    }

    let mut rng = seed::rng(seed, stream::SUBPOPULATION, 0);
    let mut cells: Vec<Vec<usize>> = vec![Vec::with_capacity(n / k + 1); k];
    let mut offset = 0;
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        for (i, &row) in members.iter().enumerate() {
            cells[(offset + i) % k].push(row);
        }
        offset = (offset + members.len()) % k;
    }
    Ok(cells
        .into_iter()
        .map(|mut members| {
            members.sort_unstable();
            let dataset = d.select_units(&members);
            Subpopulation { members, dataset }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmpConfig {
    pub features: FeatureConfig,
    pub learner: LearnerConfig,
    pub time_homogeneous: bool,
    /// Subpopulations per fit; values below 2 train on the whole population.
    pub n_subpopulations: usize,
    pub baseline_bins: usize,
}

impl Default for CmpConfig {
    fn default() -> Self {
        CmpConfig {
            features: FeatureConfig::default(),
            learner: LearnerConfig::default(),
            time_homogeneous: true,
            n_subpopulations: 10,
            baseline_bins: 4,
        }
    }
}

fn training_table(d: &ExperimentDataset, cfg: &CmpConfig, partition_seed: u64) -> Result<StateFeatures> {
    if cfg.n_subpopulations < 2 {
        return build_features(d, &cfg.features);
    }
    let subs: Vec<ExperimentDataset> = network_bootstrap_with(d, cfg.n_subpopulations, cfg.baseline_bins, partition_seed)?
        .into_iter()
        .map(|s| s.dataset)
        .collect();
    build_features_pooled(&subs, &cfg.features)
}

fn held_moments(d: &ExperimentDataset, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let (stats, _) = period_stats(d, cfg)?;
    Ok(stats.last().map(|s| s.higher.clone()).unwrap_or_default())
}

/// `CFE_T(𝟏) − CFE_T(𝟎)` for one dataset at a fixed penalty.
fn tte_at(d: &ExperimentDataset, cfg: &CmpConfig, partition_seed: u64, lambda: f64) -> Result<f64> {
    let table = training_table(d, cfg, partition_seed)?;
    let model = fit_state_evolution_with(
        &table,
        &cfg.features,
        &cfg.learner,
        lambda,
        cfg.time_homogeneous,
        held_moments(d, &cfg.features)?,
    )?;
    let m0 = d.outcomes.column_mean(0);
    let t = d.n_periods();
    let treated = counterfactual_evolution(&model, m0, AllocationScenario::AllTreated, t)?;
    let control = counterfactual_evolution(&model, m0, AllocationScenario::AllControl, t)?;
    Ok(treated.final_mean() - control.final_mean())
}

/// Total treatment effect from outcomes and assignments alone.
///
/// The point estimate trains on one network-bootstrap partition of the full
/// sample. Each bootstrap replicate resamples units with replacement, draws a
/// fresh partition and refits at the penalty chosen on the full sample.
pub fn estimate_tte_cmp(d: &ExperimentDataset, cfg: &CmpConfig, boot: &BootstrapConfig) -> Result<EffectEstimate> {
    cfg.features.validate()?;
    let table = training_table(d, cfg, seed::derive(boot.seed, stream::SUBPOPULATION, 0))?;
    let lambda = select_lambda(&table, &cfg.learner, seed::derive(boot.seed, stream::FOLDS, 0))?;
    let point = tte_at(d, cfg, seed::derive(boot.seed, stream::SUBPOPULATION, 0), lambda)?;
    let reps = bootstrap::replicate(boot, d.n_units(), |idx, b| {
        let resampled = d.select_units(idx);
        tte_at(&resampled, cfg, seed::derive(boot.seed, stream::SUBPOPULATION, b as u64 + 1), lambda).ok()
    });
    let mut est = EffectEstimate::from_bootstrap(Method::Cmp, point, &reps);
    let failed = boot.replicates - reps.len();
    if failed > 0 {
        est.warnings.push(format!("{failed} bootstrap replicate(s) failed and were dropped"));
    }
    Ok(est)
}
