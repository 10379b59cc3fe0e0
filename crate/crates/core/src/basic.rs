//! The interference-blind baseline: collapse each unit's series into a
//! pre/post difference and run a regression-adjusted difference-in-differences
//! on the final-period treatment indicator.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{self, BootstrapConfig};
use crate::data::{EffectEstimate, ExperimentDataset, Method};
use crate::error::{Error, Result};
use crate::regress::{fit_learner, LearnerConfig, Matrix};
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct PrePostRecord {
    pub unit_id: u32,
    /// Post-window mean minus pre-window mean.
    pub delta: f64,
    /// Assignment in the final period.
    pub treated: bool,
    pub covariates: Vec<f64>,
}

/// Pre window `0..=pre_period_end`, post window `pre_period_end+1..=T`.
pub fn aggregate_pre_post(d: &ExperimentDataset) -> Result<Vec<PrePostRecord>> {
    let t = d.n_periods();
    let pre = d.pre_period_end;
    if pre >= t {
        return Err(Error::Insufficient(format!(
            "post window is empty (pre_period_end = {pre}, T = {t})"
        )));
    }
    if d.n_units() == 0 {
        return Err(Error::Insufficient("dataset has no units".into()));
    }
    let n_pre = (pre + 1) as f64;
    let n_post = (t - pre) as f64;
    Ok((0..d.n_units())
        .map(|i| {
            let row = d.outcomes.row(i);
            let pre_mean = row[..=pre].iter().sum::<f64>() / n_pre;
            let post_mean = row[pre + 1..].iter().sum::<f64>() / n_post;
            PrePostRecord {
                unit_id: i as u32 + 1,
                delta: post_mean - pre_mean,
                treated: d.treatments.w(i, t) == 1,
                covariates: d
                    .covariates
                    .as_ref()
                    .map(|c| c.values[i].clone())
                    .unwrap_or_default(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BasicConfig {
    #[serde(default)]
    pub learner: LearnerConfig,
}

fn design(records: &[PrePostRecord], rows: &[usize], treated_override: Option<bool>) -> Matrix {
    let d = 1 + records.first().map_or(0, |r| r.covariates.len());
    Matrix::from_fn(rows.len(), d, |i, j| {
        let r = &records[rows[i]];
        if j == 0 {
            let w = treated_override.unwrap_or(r.treated);
            f64::from(u8::from(w))
        } else {
            r.covariates[j - 1]
        }
    })
}

/// Fits `delta ~ (treated, X)` on `rows` and averages the predicted contrast
/// `f(1, X_j) − f(0, X_j)` over the same rows.
fn contrast(records: &[PrePostRecord], rows: &[usize], cfg: &BasicConfig, lambda: f64) -> Result<f64> {
    let n_treated = rows.iter().filter(|&&r| records[r].treated).count();
    if n_treated == 0 || n_treated == rows.len() {
        return Err(Error::Degenerate("need both treated and control units".into()));
    }
    let x = design(records, rows, None);
    let y: Vec<f64> = rows.iter().map(|&r| records[r].delta).collect();
    let model = fit_learner(&cfg.learner.learner, &x, &y, lambda)?;
    let p1 = model.predict(&design(records, rows, Some(true)))?;
    let p0 = model.predict(&design(records, rows, Some(false)))?;
    Ok(p1.iter().zip(&p0).map(|(a, b)| a - b).sum::<f64>() / rows.len() as f64)
}

/// Regression-adjusted difference-in-differences that assumes no interference.
pub fn estimate_basic(d: &ExperimentDataset, cfg: &BasicConfig, boot: &BootstrapConfig) -> Result<EffectEstimate> {
    let records = aggregate_pre_post(d)?;
    let all: Vec<usize> = (0..records.len()).collect();
    let n_treated = records.iter().filter(|r| r.treated).count();
    if n_treated == 0 || n_treated == records.len() {
        return Err(Error::Degenerate(
            "the Basic estimator needs both treated and control units".into(),
        ));
    }
    let x = design(&records, &all, None);
    let y: Vec<f64> = records.iter().map(|r| r.delta).collect();
    let lambda = cfg
        .learner
        .select_lambda(&x, &y, seed::derive(boot.seed, stream::FOLDS, 0))?;
    let point = contrast(&records, &all, cfg, lambda)?;
    let reps = bootstrap::replicate(boot, records.len(), |idx, _| {
        contrast(&records, idx, cfg, lambda).ok()
    });
    Ok(EffectEstimate::from_bootstrap(Method::Basic, point, &reps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Design, OutcomePanel, TreatmentPanel, UnitCovariates};
    use crate::regress::LambdaSpec;

    /// Units with outcome `pre` through `pre_period_end` and `pre + delta` afterwards.
    fn dataset(deltas: &[f64], treated: &[bool]) -> ExperimentDataset {
        let (n, t, pre) = (deltas.len(), 4, 1);
        let mut y = OutcomePanel::zeros(n, t + 1);
        let mut w = TreatmentPanel::zeros(n, t, Design::Staggered);
        for i in 0..n {
            for s in 0..=t {
                y.set(i, s, 3.0 + if s > pre { deltas[i] } else { 0.0 });
                if s > pre && treated[i] {
                    w.set(i, s, 1);
                }
            }
        }
        ExperimentDataset {
            outcomes: y,
            treatments: w,
            graph: None,
            covariates: None,
            pre_period_end: pre,
        }
    }

    fn ols() -> BasicConfig {
        BasicConfig {
            learner: LearnerConfig::ridge(LambdaSpec::Fixed(0.0)),
        }
    }

    #[test]
    fn constant_outcome_has_zero_delta() {
        let d = dataset(&[0.0, 0.0], &[true, false]);
        let recs = aggregate_pre_post(&d).unwrap();
        assert!(recs.iter().all(|r| r.delta == 0.0));
        assert!(recs[0].treated && !recs[1].treated);
    }

    #[test]
    fn delta_is_post_mean_minus_pre_mean() {
        let mut d = dataset(&[0.0], &[false]);
        // pre (t = 0, 1): 0, 2 → mean 1; post (t = 2..4): 3, 3, 3 → mean 3.
        for (s, v) in [0.0, 2.0, 3.0, 3.0, 3.0].iter().enumerate() {
            d.outcomes.set(0, s, *v);
        }
        assert_eq!(aggregate_pre_post(&d).unwrap()[0].delta, 2.0);
    }

    #[test]
    fn empty_post_window_is_an_error() {
        let mut d = dataset(&[0.0], &[false]);
        d.pre_period_end = 4;
        assert!(aggregate_pre_post(&d).is_err());
    }

    #[test]
    fn identical_deltas_give_zero_and_no_significance() {
        let d = dataset(&[1.0, 1.0, 1.0, 1.0], &[true, false, true, false]);
        let e = estimate_basic(&d, &ols(), &BootstrapConfig { replicates: 50, seed: 1 }).unwrap();
        assert!(e.point.abs() < 1e-12);
        assert!(!e.significant_5pct);
    }

    #[test]
    fn reduces_to_difference_in_means() {
        let d = dataset(&[2.0, 2.0, 0.0, 0.0], &[true, true, false, false]);
        let e = estimate_basic(&d, &ols(), &BootstrapConfig { replicates: 20, seed: 1 }).unwrap();
        assert!((e.point - 2.0).abs() < 1e-12);
        assert_eq!(e.method, Method::Basic);
    }

    #[test]
    fn covariate_adjusted_contrast() {
        // delta = 1.5·treated + 2·x exactly.
        let xs = [0.0, 1.0, 2.0, 3.0, 0.5, 1.5];
        let tr = [true, true, true, false, false, false];
        let deltas: Vec<f64> = xs.iter().zip(&tr).map(|(x, &w)| 1.5 * f64::from(u8::from(w)) + 2.0 * x).collect();
        let mut d = dataset(&deltas, &tr);
        d.covariates = Some(UnitCovariates {
            names: vec!["x_1".into()],
            values: xs.iter().map(|&x| vec![x]).collect(),
        });
        let e = estimate_basic(&d, &ols(), &BootstrapConfig { replicates: 10, seed: 2 }).unwrap();
        assert!((e.point - 1.5).abs() < 1e-9);
    }

    #[test]
    fn single_arm_is_rejected() {
        let d = dataset(&[1.0, 2.0], &[true, true]);
        assert!(matches!(
            estimate_basic(&d, &ols(), &BootstrapConfig::default()),
            Err(Error::Degenerate(_))
        ));
        let d = dataset(&[1.0, 2.0], &[false, false]);
        assert!(estimate_basic(&d, &ols(), &BootstrapConfig::default()).is_err());
    }
}
