//! Ridge, kernel ridge and k-fold cross-validation over a lambda grid.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub type Matrix = DMatrix<f64>;

/// Builds an `n × d` matrix from row vectors. `d` is taken from the first row
/// (or `dim` when `rows` is empty).
pub fn matrix_from_rows(rows: &[Vec<f64>], dim: usize) -> Matrix {
    let d = rows.first().map_or(dim, Vec::len);
    Matrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

fn select_rows(x: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl RidgeModel {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "model expects {} feature(s), got {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| self.intercept + (0..x.ncols()).map(|j| self.coefficients[j] * x[(i, j)]).sum::<f64>())
            .collect())
    }
}

/// Ridge regression with an unpenalized intercept (columns centered internally).
pub fn ridge_fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    ridge_fit_with(x, y, lambda, true)
}

/// Solves `(XᵀX + λI) β = Xᵀy`, on centered data when `fit_intercept` is set.
pub fn ridge_fit_with(x: &Matrix, y: &[f64], lambda: f64, fit_intercept: bool) -> Result<RidgeModel> {
    let (n, d) = x.shape();
    if n == 0 {
        return Err(Error::Insufficient("ridge regression needs at least one row".into()));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows, y has {}", y.len())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be a finite nonnegative number, got {lambda}")));
    }
    let (x_mean, y_mean) = if fit_intercept {
        (
            (0..d).map(|j| x.column(j).sum() / n as f64).collect::<Vec<_>>(),
            y.iter().sum::<f64>() / n as f64,
        )
    } else {
        (vec![0.0; d], 0.0)
    };
    if d == 0 {
        return Ok(RidgeModel {
            coefficients: Vec::new(),
            intercept: y_mean,
            lambda,
        });
    }
    let xc = Matrix::from_fn(n, d, |i, j| x[(i, j)] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut a = xc.transpose() * &xc;
    for j in 0..d {
        a[(j, j)] += lambda;
    }
    let b = xc.transpose() * yc;
    let scale = (0..d).map(|j| a[(j, j)]).fold(0.0_f64, f64::max);
    let chol = a.clone().cholesky().ok_or_else(|| {
        Error::Singular(format!("XᵀX + λI is not positive definite at λ = {lambda}"))
    })?;
    let min_pivot = (0..d).map(|j| chol.l_dirty()[(j, j)].powi(2)).fold(f64::INFINITY, f64::min);
    if scale == 0.0 || min_pivot <= 1e-12 * scale {
        return Err(Error::Singular(format!(
            "rank-deficient design at λ = {lambda} (pivot ratio {:.1e})",
            if scale == 0.0 { 0.0 } else { min_pivot / scale }
        )));
    }
    let beta = chol.solve(&b);
    let intercept = y_mean - x_mean.iter().zip(beta.iter()).map(|(m, b)| m * b).sum::<f64>();
    Ok(RidgeModel {
        coefficients: beta.iter().copied().collect(),
        intercept,
        lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Rbf { bandwidth: f64 },
    Linear,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { bandwidth } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }
}

fn row(x: &Matrix, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

/// `K[i, j] = k(a_i, b_j)`.
pub fn gram(kernel: &Kernel, a: &Matrix, b: &Matrix) -> Matrix {
    let ra: Vec<Vec<f64>> = (0..a.nrows()).map(|i| row(a, i)).collect();
    let rb: Vec<Vec<f64>> = (0..b.nrows()).map(|i| row(b, i)).collect();
    Matrix::from_fn(ra.len(), rb.len(), |i, j| kernel.eval(&ra[i], &rb[j]))
}

/// Median pairwise Euclidean distance; 1.0 when undefined or zero.
pub fn median_bandwidth(x: &Matrix) -> f64 {
    let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| row(x, i)).collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d2: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let m = crate::data::quantile_sorted(&dists, 0.5);
    if m > 0.0 && m.is_finite() {
        m
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRidgeModel {
    pub dual_coefficients: Vec<f64>,
    pub kernel: Kernel,
    pub lambda: f64,
    pub train: Matrix,
}

impl KernelRidgeModel {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.train.ncols() {
            return Err(Error::Dimension(format!(
                "model expects {} feature(s), got {}",
                self.train.ncols(),
                x.ncols()
            )));
        }
        let k = gram(&self.kernel, x, &self.train);
        let alpha = DVector::from_column_slice(&self.dual_coefficients);
        Ok((k * alpha).iter().copied().collect())
    }
}

/// Solves `(K + λI) α = y` for the training Gram matrix `K`.
pub fn kernel_ridge_fit(x: &Matrix, y: &[f64], kernel: Kernel, lambda: f64) -> Result<KernelRidgeModel> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Insufficient("kernel ridge needs at least one row".into()));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows, y has {}", y.len())));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("kernel ridge lambda must be positive, got {lambda}")));
    }
    if let Kernel::Rbf { bandwidth } = kernel {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("rbf bandwidth must be positive, got {bandwidth}")));
        }
    }
    let mut k = gram(&kernel, x, x);
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite kernel value".into()));
    }
    for i in 0..n {
        k[(i, i)] += lambda;
    }
    let rhs = DVector::from_column_slice(y);
    let alpha = match k.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => k
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("K + λI could not be factorized".into()))?,
    };
    Ok(KernelRidgeModel {
        dual_coefficients: alpha.iter().copied().collect(),
        kernel,
        lambda,
        train: x.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    /// `None` selects the median pairwise distance of the training inputs.
    Rbf { bandwidth: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ridge,
    KernelRidge { kernel: KernelSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSpec {
    Fixed(f64),
    CrossValidated { grid: Vec<f64>, folds: usize },
}

/// Log-spaced grid `1e-6, 1e-5, ..., 1e3`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-6..=3).map(|e| 10f64.powi(e)).collect()
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::CrossValidated {
            grid: default_lambda_grid(),
            folds: 5,
        }
    }
}

/// Which regressor to fit and how to pick its penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub learner: LearnerKind,
    #[serde(default)]
    pub lambda: LambdaSpec,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            learner: LearnerKind::Ridge,
            lambda: LambdaSpec::default(),
        }
    }
}

impl LearnerConfig {
    pub fn ridge(lambda: LambdaSpec) -> Self {
        LearnerConfig {
            learner: LearnerKind::Ridge,
            lambda,
        }
    }

    /// Resolves the penalty (cross-validating if configured).
    pub fn select_lambda(&self, x: &Matrix, y: &[f64], seed: u64) -> Result<f64> {
        match &self.lambda {
            LambdaSpec::Fixed(l) => Ok(*l),
            LambdaSpec::CrossValidated { grid, folds } => {
                let folds = fold_assignment(x.nrows(), *folds, seed)?;
                cross_validate_with_folds(&self.learner, x, y, grid, &folds)
            }
        }
    }

    pub fn fit(&self, x: &Matrix, y: &[f64], seed: u64) -> Result<FittedModel> {
        let lambda = self.select_lambda(x, y, seed)?;
        fit_learner(&self.learner, x, y, lambda)
    }
}

/// A fitted ridge or kernel-ridge regressor. Kernel ridge is fit on
/// mean-centered targets; `offset` adds the mean back.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Ridge(RidgeModel),
    KernelRidge { model: KernelRidgeModel, offset: f64 },
}

impl FittedModel {
    pub fn lambda(&self) -> f64 {
        match self {
            FittedModel::Ridge(m) => m.lambda,
            FittedModel::KernelRidge { model, .. } => model.lambda,
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            FittedModel::Ridge(m) => m.predict(x),
            FittedModel::KernelRidge { model, offset } => {
                Ok(model.predict(x)?.into_iter().map(|v| v + offset).collect())
            }
        }
    }
}

pub fn fit_learner(kind: &LearnerKind, x: &Matrix, y: &[f64], lambda: f64) -> Result<FittedModel> {
    match kind {
        LearnerKind::Ridge => ridge_fit(x, y, lambda).map(FittedModel::Ridge),
        LearnerKind::KernelRidge { kernel } => {
            let kernel = match *kernel {
                KernelSpec::Linear => Kernel::Linear,
                KernelSpec::Rbf { bandwidth } => Kernel::Rbf {
                    bandwidth: bandwidth.unwrap_or_else(|| median_bandwidth(x)),
                },
            };
            let offset = if y.is_empty() { 0.0 } else { y.iter().sum::<f64>() / y.len() as f64 };
            let centered: Vec<f64> = y.iter().map(|v| v - offset).collect();
            let model = kernel_ridge_fit(x, &centered, kernel, lambda)?;
            Ok(FittedModel::KernelRidge { model, offset })
        }
    }
}

/// Fold index per row: a seeded permutation dealt round-robin into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Insufficient(format!(
            "{n} row(s) cannot fill {k} folds with at least one sample each"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed, seed::stream::FOLDS, 0));
    let mut folds = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        folds[row] = pos % k;
    }
    Ok(folds)
}

/// Ridge cross-validation: the grid value with the smallest pooled held-out
/// squared error, ties going to the larger lambda.
pub fn cross_validate(x: &Matrix, y: &[f64], grid: &[f64], k_folds: usize, seed: u64) -> Result<f64> {
    let folds = fold_assignment(x.nrows(), k_folds, seed)?;
    cross_validate_with_folds(&LearnerKind::Ridge, x, y, grid, &folds)
}

/// Held-out squared error per grid value for an explicit fold map.
pub fn cv_errors(kind: &LearnerKind, x: &Matrix, y: &[f64], grid: &[f64], folds: &[usize]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    if folds.len() != x.nrows() || y.len() != x.nrows() {
        return Err(Error::Dimension("fold map, X and y must have the same length".into()));
    }
    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    let mut splits = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == f).collect();
        let train: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != f).collect();
        if test.is_empty() || train.is_empty() {
            return Err(Error::Insufficient(format!("fold {f} has no samples")));
        }
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        splits.push((select_rows(x, &train), y_train, select_rows(x, &test), test));
    }
    Ok(grid
        .iter()
        .map(|&lambda| {
            let mut sse = 0.0;
            for (x_train, y_train, x_test, test) in &splits {
                let pred = match fit_learner(kind, x_train, y_train, lambda).and_then(|m| m.predict(x_test)) {
                    Ok(p) => p,
                    Err(_) => return f64::INFINITY,
                };
                sse += test.iter().zip(pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>();
            }
            sse / x.nrows() as f64
        })
        .collect())
}

pub fn cross_validate_with_folds(
    kind: &LearnerKind,
    x: &Matrix,
    y: &[f64],
    grid: &[f64],
    folds: &[usize],
) -> Result<f64> {
    let errors = cv_errors(kind, x, y, grid, folds)?;
    let mut best: Option<(f64, f64)> = None;
    for (&lambda, &err) in grid.iter().zip(&errors) {
        if !err.is_finite() {
            continue;
        }
        best = match best {
            Some((bl, be)) if err > be || (err == be && lambda <= bl) => Some((bl, be)),
            _ => Some((lambda, err)),
        };
    }
    best.map(|(l, _)| l)
        .ok_or_else(|| Error::Singular("every lambda in the grid failed to fit".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye2() -> Matrix {
        Matrix::identity(2, 2)
    }

    #[test]
    fn identity_interpolates_at_zero_lambda() {
        let m = ridge_fit_with(&eye2(), &[1.0, 2.0], 0.0, false).unwrap();
        assert_eq!(m.coefficients, vec![1.0, 2.0]);
        assert_eq!(m.intercept, 0.0);
        assert_eq!(m.predict(&eye2()).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn identity_shrinks_by_one_plus_lambda() {
        let m = ridge_fit_with(&eye2(), &[1.0, 2.0], 1.0, false).unwrap();
        assert!((m.coefficients[0] - 0.5).abs() < 1e-15);
        assert!((m.coefficients[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rank_deficient_at_zero_lambda_is_reported() {
        let x = matrix_from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]], 2);
        let err = ridge_fit(&x, &[1.0, 2.0, 3.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::Singular(_)), "{err}");
        assert!(ridge_fit(&x, &[1.0, 2.0, 3.0], 0.1).is_ok());
    }

    #[test]
    fn zero_coefficients_predict_intercept() {
        let m = RidgeModel {
            coefficients: vec![0.0, 0.0],
            intercept: 4.5,
            lambda: 1.0,
        };
        let x = matrix_from_rows(&[vec![1.0, -3.0], vec![7.0, 2.0]], 2);
        assert_eq!(m.predict(&x).unwrap(), vec![4.5, 4.5]);
        assert!(m.predict(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn single_point_rbf_prediction() {
        let x = matrix_from_rows(&[vec![0.3, -1.0]], 2);
        let m = kernel_ridge_fit(&x, &[2.0], Kernel::Rbf { bandwidth: 0.7 }, 0.25).unwrap();
        let p = m.predict(&x).unwrap();
        assert!((p[0] - 2.0 / 1.25).abs() < 1e-15);
    }

    #[test]
    fn large_lambda_shrinks_toward_zero() {
        let x = matrix_from_rows(&[vec![0.0], vec![1.0], vec![2.0]], 1);
        let y = [1.0, 3.0, 2.0];
        let m = kernel_ridge_fit(&x, &y, Kernel::Rbf { bandwidth: 1.0 }, 1e9).unwrap();
        assert!(m.predict(&x).unwrap().iter().all(|p| p.abs() < 1e-8));
    }

    #[test]
    fn kernel_ridge_rejects_bad_config() {
        let x = matrix_from_rows(&[vec![0.0]], 1);
        assert!(kernel_ridge_fit(&x, &[1.0], Kernel::Linear, 0.0).is_err());
        assert!(kernel_ridge_fit(&x, &[1.0], Kernel::Rbf { bandwidth: 0.0 }, 1.0).is_err());
        assert!(kernel_ridge_fit(&x, &[f64::NAN], Kernel::Rbf { bandwidth: f64::NAN }, 1.0).is_err());
    }

    #[test]
    fn single_value_grid_is_returned() {
        let x = matrix_from_rows(&(0..10).map(|i| vec![f64::from(i)]).collect::<Vec<_>>(), 1);
        let y: Vec<f64> = (0..10).map(|i| f64::from(i) * 0.5).collect();
        assert_eq!(cross_validate(&x, &y, &[0.3], 5, 1).unwrap(), 0.3);
    }

    #[test]
    fn exact_tie_prefers_larger_lambda() {
        // Constant target: every penalty predicts it exactly.
        let x = matrix_from_rows(&(0..10).map(|i| vec![f64::from(i)]).collect::<Vec<_>>(), 1);
        let y = vec![3.0; 10];
        assert_eq!(cross_validate(&x, &y, &[0.1, 5.0, 1.0], 5, 1).unwrap(), 5.0);
    }

    #[test]
    fn fold_errors() {
        assert!(fold_assignment(3, 5, 0).is_err());
        assert!(fold_assignment(10, 1, 0).is_err());
        let f = fold_assignment(10, 3, 9).unwrap();
        for k in 0..3 {
            assert!(f.iter().filter(|&&x| x == k).count() >= 3);
        }
        let x = Matrix::zeros(4, 1);
        assert!(cross_validate(&x, &[0.0; 4], &[], 2, 0).is_err());
    }
}
