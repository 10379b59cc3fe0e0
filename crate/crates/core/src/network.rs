//! Exposure-mapping estimator that uses the observed bipartite graph.
//!
//! For treatment unit `j` with connected set `C_j`:
//!
//! ```text
//! e_dir_j = W_j · |C_j|
//! e_ind_j = Σ_{c ∈ C_j} Σ_{k ≠ j} W_k · 1(k ∈ T_c)
//! ```
//!
//! The pre/post outcome difference is regressed on `(e_dir, e_ind, X)` and the
//! fitted surface is contrasted between the all-eligible-treated exposures and
//! `(0, 0)`.

use serde::{Deserialize, Serialize};

use crate::basic::aggregate_pre_post;
use crate::bootstrap::{self, BootstrapConfig};
use crate::data::{BipartiteGraph, EffectEstimate, ExperimentDataset, GraphIndex, Method, UnitCovariates};
use crate::error::{Error, Result};
use crate::regress::{fit_learner, FittedModel, LearnerConfig, Matrix};
use crate::seed::{self, stream};

/// Exposures of the eligible units, in unit-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureVector {
    pub unit_ids: Vec<u32>,
    pub e_dir: Vec<f64>,
    pub e_ind: Vec<f64>,
}

impl ExposureVector {
    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExposureOptions {
    /// Multiply each edge's contribution by its weight ω.
    #[serde(default)]
    pub weighted: bool,
}

fn eligible_positions(gi: &GraphIndex, g: &BipartiteGraph) -> Vec<(u32, usize)> {
    let mut out: Vec<(u32, usize)> = g
        .treatment_units
        .iter()
        .filter(|u| u.eligible)
        .filter_map(|u| gi.position(u.id).map(|p| (u.id, p)))
        .collect();
    out.sort_unstable();
    out
}

fn check_len(g: &BipartiteGraph, w: &[u8]) -> Result<()> {
    if w.len() != g.treatment_units.len() {
        return Err(Error::Dimension(format!(
            "assignment covers {} units, graph has {} treatment units",
            w.len(),
            g.treatment_units.len()
        )));
    }
    Ok(())
}

/// Both exposures under assignment `w` (one entry per treatment unit of `g`,
/// in `g.treatment_units` order).
pub fn exposures(g: &BipartiteGraph, w: &[u8], opts: ExposureOptions) -> Result<ExposureVector> {
    check_len(g, w)?;
    let gi = g.index()?;
    Ok(exposures_indexed(g, &gi, w, opts))
}

fn exposures_indexed(g: &BipartiteGraph, gi: &GraphIndex, w: &[u8], opts: ExposureOptions) -> ExposureVector {
    let treated_per_connected: Vec<f64> = gi
        .members
        .iter()
        .map(|m| m.iter().map(|&k| f64::from(w[k])).sum())
        .collect();
    let units = eligible_positions(gi, g);
    let mut out = ExposureVector {
        unit_ids: Vec::with_capacity(units.len()),
        e_dir: Vec::with_capacity(units.len()),
        e_ind: Vec::with_capacity(units.len()),
    };
    for (id, j) in units {
        let own = f64::from(w[j]);
        let mut dir = 0.0;
        let mut ind = 0.0;
        for &(c, omega) in &gi.unit_edges[j] {
            let scale = if opts.weighted { omega } else { 1.0 };
            dir += scale;
            // j itself belongs to T_c exactly once.
            ind += scale * (treated_per_connected[c] - own);
        }
        out.unit_ids.push(id);
        out.e_dir.push(own * dir);
        out.e_ind.push(ind);
    }
    out
}

/// `e_dir` per eligible unit.
pub fn direct_exposure(g: &BipartiteGraph, w: &[u8]) -> Result<Vec<f64>> {
    Ok(exposures(g, w, ExposureOptions::default())?.e_dir)
}

/// `e_ind` per eligible unit.
pub fn indirect_exposure(g: &BipartiteGraph, w: &[u8]) -> Result<Vec<f64>> {
    Ok(exposures(g, w, ExposureOptions::default())?.e_ind)
}

/// Final-period assignment of the dataset spread over every treatment unit of
/// `g`; ineligible units are in control.
pub fn observed_assignment(g: &BipartiteGraph, d: &ExperimentDataset) -> Result<Vec<u8>> {
    let gi = g.index()?;
    let mut w = vec![0u8; g.treatment_units.len()];
    let last = d.n_periods();
    for row in 0..d.n_units() {
        let id = row as u32 + 1;
        let pos = gi.position(id).ok_or(Error::UnitNotInGraph(id))?;
        w[pos] = d.treatments.w(row, last);
    }
    Ok(w)
}

/// The 𝟏 allocation: every eligible unit treated, and ineligible units too
/// when `include_ineligible` is set.
pub fn all_treated_assignment(g: &BipartiteGraph, include_ineligible: bool) -> Vec<u8> {
    g.treatment_units
        .iter()
        .map(|u| u8::from(u.eligible || include_ineligible))
        .collect()
}

/// Fitted outcome surface over `(e_dir, e_ind, X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    pub model: FittedModel,
    /// Standard deviation of the training residuals.
    pub residual_scale: f64,
    pub n_covariates: usize,
    /// Largest observed `(e_dir, e_ind)`.
    pub max_exposure: (f64, f64),
}

impl OutcomeModel {
    pub fn predict(&self, e_dir: &[f64], e_ind: &[f64], covariates: Option<&UnitCovariates>, rows: &[usize]) -> Result<Vec<f64>> {
        let x = psi_design(e_dir, e_ind, covariates, rows, self.n_covariates)?;
        self.model.predict(&x)
    }
}

fn psi_design(
    e_dir: &[f64],
    e_ind: &[f64],
    covariates: Option<&UnitCovariates>,
    rows: &[usize],
    n_cov: usize,
) -> Result<Matrix> {
    let got = covariates.map_or(0, UnitCovariates::dim);
    if got != n_cov {
        return Err(Error::Dimension(format!("model expects {n_cov} covariate(s), got {got}")));
    }
    Ok(Matrix::from_fn(rows.len(), 2 + n_cov, |i, j| {
        let r = rows[i];
        match j {
            0 => e_dir[r],
            1 => e_ind[r],
            _ => covariates.expect("checked above").values[r][j - 2],
        }
    }))
}

fn check_spread(exposures: &ExposureVector, rows: &[usize]) -> Result<()> {
    let first = rows
        .first()
        .map(|&r| (exposures.e_dir[r], exposures.e_ind[r]))
        .ok_or_else(|| Error::Insufficient("no rows to fit".into()))?;
    if rows.iter().all(|&r| (exposures.e_dir[r], exposures.e_ind[r]) == first) {
        return Err(Error::Degenerate("all exposure points are identical".into()));
    }
    Ok(())
}

/// Fits the outcome model on the listed rows at a fixed penalty.
pub fn fit_psi_rows(
    exposures: &ExposureVector,
    covariates: Option<&UnitCovariates>,
    outcomes: &[f64],
    learner: &LearnerConfig,
    lambda: f64,
    rows: &[usize],
) -> Result<OutcomeModel> {
    if outcomes.len() != exposures.len() {
        return Err(Error::Dimension(format!(
            "{} outcomes for {} exposure rows",
            outcomes.len(),
            exposures.len()
        )));
    }
    check_spread(exposures, rows)?;
    let n_cov = covariates.map_or(0, UnitCovariates::dim);
    let x = psi_design(&exposures.e_dir, &exposures.e_ind, covariates, rows, n_cov)?;
    let y: Vec<f64> = rows.iter().map(|&r| outcomes[r]).collect();
    let model = fit_learner(&learner.learner, &x, &y, lambda)?;
    let fitted = model.predict(&x)?;
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let max_exposure = rows.iter().fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |(a, b), &r| {
        (a.max(exposures.e_dir[r]), b.max(exposures.e_ind[r]))
    });
    Ok(OutcomeModel {
        model,
        residual_scale: crate::data::std_dev(&resid),
        n_covariates: n_cov,
        max_exposure,
    })
}

/// Fits the outcome model, choosing the penalty as configured.
pub fn fit_psi(
    exposures: &ExposureVector,
    covariates: Option<&UnitCovariates>,
    outcomes: &[f64],
    learner: &LearnerConfig,
    seed: u64,
) -> Result<OutcomeModel> {
    let rows: Vec<usize> = (0..exposures.len()).collect();
    check_spread(exposures, &rows)?;
    let n_cov = covariates.map_or(0, UnitCovariates::dim);
    let x = psi_design(&exposures.e_dir, &exposures.e_ind, covariates, &rows, n_cov)?;
    let lambda = learner.select_lambda(&x, outcomes, seed)?;
    fit_psi_rows(exposures, covariates, outcomes, learner, lambda, &rows)
}

/// Mean over `rows` of `Ψ̂(e_dir(𝟏), e_ind(𝟏), X_j) − Ψ̂(0, 0, X_j)`.
pub fn ptte_point(
    model: &OutcomeModel,
    treated: &ExposureVector,
    covariates: Option<&UnitCovariates>,
    rows: &[usize],
) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Insufficient("no eligible units".into()));
    }
    let zeros = vec![0.0; treated.len()];
    let p1 = model.predict(&treated.e_dir, &treated.e_ind, covariates, rows)?;
    let p0 = model.predict(&zeros, &zeros, covariates, rows)?;
    Ok(p1.iter().zip(&p0).map(|(a, b)| a - b).sum::<f64>() / rows.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct NetworkConfig {
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub exposures: ExposureOptions,
    /// Count ineligible neighbours as treated in the full-treatment contrast.
    #[serde(default)]
    pub treat_ineligible_in_contrast: bool,
}

/// Network-aware total treatment effect on the eligible units, with a unit
/// bootstrap that refits the outcome model on every resample.
pub fn estimate_ptte(d: &ExperimentDataset, cfg: &NetworkConfig, boot: &BootstrapConfig) -> Result<EffectEstimate> {
    let g = d
        .graph
        .as_ref()
        .ok_or_else(|| Error::Config("the network-aware estimator needs a graph".into()))?;
    let gi = g.index()?;
    let observed = observed_assignment(g, d)?;
    let exp_obs = exposures_indexed(g, &gi, &observed, cfg.exposures);
    let exp_all = exposures_indexed(
        g,
        &gi,
        &all_treated_assignment(g, cfg.treat_ineligible_in_contrast),
        cfg.exposures,
    );
    if exp_obs.len() != d.n_units() {
        return Err(Error::Dimension(format!(
            "graph has {} eligible units, dataset has {}",
            exp_obs.len(),
            d.n_units()
        )));
    }
    let deltas: Vec<f64> = aggregate_pre_post(d)?.into_iter().map(|r| r.delta).collect();
    let cov = d.covariates.as_ref();

    let model = fit_psi(&exp_obs, cov, &deltas, &cfg.learner, seed::derive(boot.seed, stream::FOLDS, 0))?;
    let lambda = model.model.lambda();
    let all: Vec<usize> = (0..d.n_units()).collect();
    let point = ptte_point(&model, &exp_all, cov, &all)?;

    let reps = bootstrap::replicate(boot, d.n_units(), |idx, _| {
        let m = fit_psi_rows(&exp_obs, cov, &deltas, &cfg.learner, lambda, idx).ok()?;
        ptte_point(&m, &exp_all, cov, idx).ok()
    });
    let mut est = EffectEstimate::from_bootstrap(Method::NetworkAware, point, &reps);

    let (max_dir, max_ind) = model.max_exposure;
    let outside = (0..exp_all.len())
        .filter(|&j| exp_all.e_dir[j] > max_dir || exp_all.e_ind[j] > max_ind)
        .count();
    if outside > 0 {
        est.warnings.push(format!(
            "{outside} of {} unit(s) have full-treatment exposures outside the observed range; the contrast extrapolates",
            exp_all.len()
        ));
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Edge, TreatmentUnit};
    use crate::regress::LambdaSpec;

    fn graph(edges: &[(u32, u32)], eligible: &[bool], n_conn: u32) -> BipartiteGraph {
        BipartiteGraph {
            treatment_units: eligible
                .iter()
                .enumerate()
                .map(|(i, &e)| TreatmentUnit { id: i as u32 + 1, eligible: e })
                .collect(),
            connected_units: (1..=n_conn).collect(),
            edges: edges
                .iter()
                .map(|&(treatment, connected)| Edge { treatment, connected, weight: 2.0 })
                .collect(),
        }
    }

    #[test]
    fn direct_exposure_counts_edges_of_treated_units() {
        let g = graph(&[(1, 1), (1, 2), (1, 3), (2, 1)], &[true, true], 3);
        assert_eq!(direct_exposure(&g, &[1, 0]).unwrap(), vec![3.0, 0.0]);
        assert_eq!(direct_exposure(&g, &[0, 1]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn indirect_exposure_counts_treated_co_members() {
        // Units 1 and 2 share connected unit 1; only 2 is treated.
        let g = graph(&[(1, 1), (2, 1), (3, 2)], &[true, true, true], 2);
        assert_eq!(indirect_exposure(&g, &[0, 1, 0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(indirect_exposure(&g, &[0, 0, 0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn weighted_exposures_scale_by_edge_weight() {
        let g = graph(&[(1, 1), (2, 1)], &[true, true], 1);
        let e = exposures(&g, &[1, 1], ExposureOptions { weighted: true }).unwrap();
        assert_eq!(e.e_dir, vec![2.0, 2.0]);
        assert_eq!(e.e_ind, vec![2.0, 2.0]);
    }

    #[test]
    fn ineligible_units_are_excluded_but_their_treatment_would_count() {
        let g = graph(&[(1, 1), (2, 1)], &[true, false], 1);
        let e = exposures(&g, &[0, 0], ExposureOptions::default()).unwrap();
        assert_eq!(e.unit_ids, vec![1]);
        assert_eq!(e.e_ind, vec![0.0]);
        // A (forbidden) treated ineligible neighbour changes the exposure.
        assert_eq!(indirect_exposure(&g, &[0, 1]).unwrap(), vec![1.0]);
        assert_eq!(all_treated_assignment(&g, false), vec![1, 0]);
        assert_eq!(all_treated_assignment(&g, true), vec![1, 1]);
    }

    #[test]
    fn assignment_length_is_checked() {
        let g = graph(&[(1, 1)], &[true], 1);
        assert!(direct_exposure(&g, &[1, 0]).is_err());
    }

    fn ev(e_dir: &[f64], e_ind: &[f64]) -> ExposureVector {
        ExposureVector {
            unit_ids: (1..=e_dir.len() as u32).collect(),
            e_dir: e_dir.to_vec(),
            e_ind: e_ind.to_vec(),
        }
    }

    #[test]
    fn psi_interpolates_linear_outcomes() {
        let e = ev(&[0.0, 1.0, 2.0, 3.0, 0.0, 2.0], &[1.0, 0.0, 2.0, 1.0, 3.0, 0.0]);
        let y = e.e_dir.clone();
        let learner = LearnerConfig::ridge(LambdaSpec::Fixed(1e-10));
        let m = fit_psi(&e, None, &y, &learner, 0).unwrap();
        let rows: Vec<usize> = (0..6).collect();
        let p = m.predict(&e.e_dir, &e.e_ind, None, &rows).unwrap();
        for (a, b) in p.iter().zip(&y) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_outcomes_give_constant_predictor_and_zero_ptte() {
        let e = ev(&[0.0, 1.0, 2.0], &[1.0, 0.0, 2.0]);
        let m = fit_psi(&e, None, &[4.0; 3], &LearnerConfig::ridge(LambdaSpec::Fixed(0.5)), 0).unwrap();
        let p = m.predict(&[9.0], &[9.0], None, &[0]).unwrap();
        assert!((p[0] - 4.0).abs() < 1e-12);
        let treated = ev(&[5.0, 6.0, 7.0], &[3.0, 3.0, 3.0]);
        assert!(ptte_point(&m, &treated, None, &[0, 1, 2]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ptte_of_identity_on_direct_exposure_is_mean_degree() {
        let e = ev(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 0.0, 1.0]);
        let m = fit_psi(&e, None, &e.e_dir.clone(), &LearnerConfig::ridge(LambdaSpec::Fixed(0.0)), 0).unwrap();
        let treated = ev(&[1.0, 2.0, 3.0], &[2.0, 2.0, 0.0]);
        let v = ptte_point(&m, &treated, None, &[0, 1, 2]).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_exposures_are_rejected() {
        let e = ev(&[1.0, 1.0], &[0.0, 0.0]);
        assert!(matches!(
            fit_psi(&e, None, &[1.0, 2.0], &LearnerConfig::default(), 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn estimator_needs_a_graph() {
        let d = ExperimentDataset {
            outcomes: crate::data::OutcomePanel::zeros(2, 3),
            treatments: crate::data::TreatmentPanel::zeros(2, 2, crate::data::Design::Staggered),
            graph: None,
            covariates: None,
            pre_period_end: 0,
        };
        assert!(matches!(
            estimate_ptte(&d, &NetworkConfig::default(), &BootstrapConfig::default()),
            Err(Error::Config(_))
        ));
    }
}
