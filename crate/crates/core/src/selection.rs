//! λ grids, robust k-fold cross-validation and the robust out-of-sample
//! error.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::init::m_scale;
use crate::linalg::{lstsq, sample_sd, select_rows_vec};
use crate::penalty::PenaltyKind;
use crate::solver::{fold_assignment, log_grid, DualDescent, Estimate, FitResult, RegressionProblem, SolverOptions};

/// Minimum test-fold size for the robust statistic.
pub const MIN_TEST_SAMPLES: usize = 5;

/// Floor on the training residual scale.
pub const SCALE_FLOOR: f64 = 1e-12;

/// `max(|[y; X'y]| / w)`.
pub fn lambda_max_formula(y: &[f64], xty: &[f64], w: &[f64]) -> f64 {
    assert_eq!(y.len() + xty.len(), w.len(), "weights must cover [y; X'y]");
    y.iter()
        .chain(xty)
        .zip(w)
        .fold(0.0, |m: f64, (v, wi)| m.max(v.abs() / wi))
}

/// Descending λ values with the number of detected outliers at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPath {
    pub values: Vec<f64>,
    pub nnz_gamma: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub n_points: usize,
    /// Lowest admissible `λmin / λmax`.
    pub floor_ratio: f64,
    /// Points of the coarse downward search for `λmin`.
    pub search_points: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { n_points: 40, floor_ratio: 1e-3, search_points: 15 }
    }
}

/// Largest useful λ: the gradient of the loss at the intercept-only fit,
/// divided by `α·κ·w` coordinatewise.
pub fn lambda_max(problem: &RegressionProblem) -> f64 {
    let n = problem.n_samples();
    let ns = problem.n_shift();
    let nf = n as f64;
    let free = problem.unpenalized_coef();
    let resid = if free.is_empty() {
        problem.y.clone()
    } else {
        let xf = problem.x.select_columns(&free);
        &problem.y - &xf * lstsq(&xf, &problem.y)
    };
    let grad_beta = &problem.constraint.proj_comp * problem.x.tr_mul(&resid) / nf;
    let spec = &problem.penalty;
    let adaptive = spec.kind == PenaltyKind::AdaptiveElasticNet;
    let scale = |i: usize| {
        let w = if adaptive { spec.weights[i] } else { 1.0 };
        if spec.penalized[i] {
            spec.alpha.max(1e-12) * spec.kappa[i] * w
        } else {
            f64::INFINITY
        }
    };
    let ys: Vec<f64> = if ns > 0 { resid.iter().map(|r| r / nf.sqrt()).collect() } else { Vec::new() };
    let w: Vec<f64> = (0..spec.len()).map(scale).collect();
    lambda_max_formula(&ys, grad_beta.as_slice(), &w)
}

/// Fits along a descending path, warm-starting each from the previous.
pub fn fit_path(
    solver: &DualDescent<'_>,
    values: &[f64],
    init: &Estimate,
) -> Result<Vec<FitResult>> {
    let mut out: Vec<FitResult> = Vec::with_capacity(values.len());
    for &lam in values {
        let fit = solver.fit(lam, init, out.last())?;
        out.push(fit);
    }
    Ok(out)
}

/// Grid from `λmax` down to the first λ of a coarse search at which at
/// least half of the samples carry a nonzero shift (or the floor), with
/// the full-data fits along it.
pub fn lambda_grid(
    problem: &RegressionProblem,
    init: &Estimate,
    grid: &GridOptions,
    opts: &SolverOptions,
) -> Result<(LambdaPath, Vec<FitResult>)> {
    if grid.n_points < 2 {
        return Err(Error::InvalidParameter("a path needs at least two points".into()));
    }
    let lmax = lambda_max(problem);
    if !(lmax > 0.0 && lmax.is_finite()) {
        return Err(Error::InvalidParameter(format!("degenerate lambda_max {lmax}")));
    }
    let solver = DualDescent::new(problem, *opts);
    let half = problem.n_samples().div_ceil(2);
    let coarse = log_grid(lmax, grid.floor_ratio, grid.search_points.max(2));
    let mut lmin = *coarse.last().expect("nonempty grid");
    let mut prev: Option<FitResult> = None;
    for &lam in &coarse[1..] {
        let fit = solver.fit(lam, init, prev.as_ref())?;
        if fit.outliers().len() >= half {
            lmin = lam;
            break;
        }
        prev = Some(fit);
    }
    let values = log_grid(lmax, lmin / lmax, grid.n_points);
    let fits = fit_path(&solver, &values, init)?;
    let nnz_gamma = fits.iter().map(|f| f.outliers().len()).collect();
    Ok((LambdaPath { values, nnz_gamma }, fits))
}

/// Standard deviation of a standard normal truncated to `[-k, k]`.
pub fn truncated_normal_sd(k: f64) -> f64 {
    let z = Normal::standard();
    let mass = 2.0 * z.cdf(k) - 1.0;
    (1.0 - 2.0 * k * z.pdf(k) / mass).sqrt()
}

/// Settings of the robust test statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticOptions {
    /// Test residuals beyond `cutoff · ŝ_te` are dropped.
    pub cutoff: f64,
    /// Divide the clean SD by the SD of a normal truncated at `cutoff`.
    pub consistency: bool,
}

impl Default for StatisticOptions {
    fn default() -> Self {
        Self { cutoff: 2.0, consistency: true }
    }
}

/// `|σ̂ᶜ − 1|` for a fit `(β, γ)` trained on `(x_tr, y_tr)` and evaluated on
/// `(x_te, y_te)`. Returns `+∞` when fewer than two test samples survive
/// the outlier rule.
pub fn fold_test_statistic(
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    train: (&DMatrix<f64>, &DVector<f64>),
    test: (&DMatrix<f64>, &DVector<f64>),
    opts: &StatisticOptions,
) -> f64 {
    let (x_tr, y_tr) = train;
    let (x_te, y_te) = test;
    let s_tr = train_scale(beta, gamma, x_tr, y_tr);
    let r_te: Vec<f64> = (y_te - x_te * beta).iter().copied().collect();
    residual_statistic(&r_te, s_tr, opts)
}

/// Root mean square of the training residuals `y − Xβ − γ`, floored.
pub fn train_scale(beta: &DVector<f64>, gamma: &DVector<f64>, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let mut r = y - x * beta;
    if !gamma.is_empty() {
        r -= gamma;
    }
    (r.norm_squared() / y.len() as f64).sqrt().max(SCALE_FLOOR)
}

/// `|σ̂ᶜ − 1|` of raw test residuals `r_te` scaled by the training scale `s_tr`.
pub fn residual_statistic(r_te: &[f64], s_tr: f64, opts: &StatisticOptions) -> f64 {
    let s_tr = s_tr.max(SCALE_FLOOR);
    let r_te: Vec<f64> = r_te.iter().map(|r| r / s_tr).collect();
    let s_te = m_scale(&r_te);
    let clean: Vec<f64> = r_te.iter().copied().filter(|r| r.abs() <= opts.cutoff * s_te).collect();
    if clean.len() < 2 {
        return f64::INFINITY;
    }
    let mut sigma = sample_sd(&clean);
    if opts.consistency {
        sigma /= truncated_normal_sd(opts.cutoff);
    }
    (sigma - 1.0).abs()
}

/// Robust error of a full-data fit on a hold-out set.
pub fn robust_oos_error(
    fit: &FitResult,
    train: (&DMatrix<f64>, &DVector<f64>),
    holdout: (&DMatrix<f64>, &DVector<f64>),
    opts: &StatisticOptions,
) -> f64 {
    fold_test_statistic(&fit.beta, &fit.gamma, train, holdout, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SelectionRule {
    #[default]
    Min,
    OneSe,
}

impl std::str::FromStr for SelectionRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(Self::Min),
            "1se" | "onese" => Ok(Self::OneSe),
            _ => Err(Error::InvalidParameter(format!("unknown selection rule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    /// `per_fold[f][l]`: statistic of fold `f` at `lambdas[l]`.
    pub per_fold: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    pub index_min: usize,
    pub index_1se: usize,
    pub folds: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    pub statistic: StatisticOptions,
    pub solver: SolverOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { k: 10, seed: 0, statistic: StatisticOptions::default(), solver: SolverOptions::default() }
    }
}

/// Mean and standard error over the finite entries of each column.
pub fn aggregate(per_fold: &[Vec<f64>], n_lambda: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![f64::INFINITY; n_lambda];
    let mut se = vec![0.0; n_lambda];
    for l in 0..n_lambda {
        let vals: Vec<f64> = per_fold.iter().map(|f| f[l]).filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            continue;
        }
        mean[l] = vals.iter().sum::<f64>() / vals.len() as f64;
        se[l] = sample_sd(&vals) / (vals.len() as f64).sqrt();
    }
    (mean, se)
}

/// `(index_min, index_1se)` for a descending path. Ties go to the larger λ.
pub fn choose_indices(mean: &[f64], se: &[f64]) -> (usize, usize) {
    let mut imin = 0;
    for (l, &m) in mean.iter().enumerate() {
        if m < mean[imin] {
            imin = l;
        }
    }
    let bound = mean[imin] + se[imin];
    let i1se = (0..=imin).find(|&l| mean[l] <= bound).unwrap_or(imin);
    (imin, i1se)
}

/// k-fold robust cross-validation along `path`.
///
/// Each fold refits the warm-started path on its training rows, using the
/// training rows of `init` as the starting point.
pub fn robust_cv(
    problem: &RegressionProblem,
    path: &[f64],
    init: &Estimate,
    opts: &CvOptions,
) -> Result<CvResult> {
    let n = problem.n_samples();
    if path.is_empty() {
        return Err(Error::InvalidParameter("empty lambda path".into()));
    }
    if opts.k < 2 || n / opts.k < MIN_TEST_SAMPLES {
        return Err(Error::TooFewTestSamples(n / opts.k.max(1)));
    }
    let folds = fold_assignment(n, opts.k, opts.seed);
    let per_fold: Vec<Vec<f64>> = (0..opts.k)
        .into_par_iter()
        .map(|f| -> Result<Vec<f64>> {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let sub = problem.subset(&train);
            let solver = DualDescent::new(&sub, opts.solver);
            let fits = fit_path(&solver, path, &init.subset(&train))?;
            let x_te = problem.x.select_rows(&test);
            let y_te = select_rows_vec(&problem.y, &test);
            Ok(fits
                .iter()
                .map(|fit| {
                    fold_test_statistic(
                        &fit.beta,
                        &fit.gamma,
                        (&sub.x, &sub.y),
                        (&x_te, &y_te),
                        &opts.statistic,
                    )
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    for (f, row) in per_fold.iter().enumerate() {
        let bad = row.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            warn!("fold {f}: {bad} lambda values left too few clean test samples");
        }
    }
    let (mean, se) = aggregate(&per_fold, path.len());
    let (index_min, index_1se) = choose_indices(&mean, &se);
    Ok(CvResult {
        lambdas: path.to_vec(),
        per_fold,
        mean,
        se,
        lambda_min: path[index_min],
        lambda_1se: path[index_1se],
        index_min,
        index_1se,
        folds,
        seed: opts.seed,
    })
}

pub fn select_lambda(cv: &CvResult, rule: SelectionRule) -> f64 {
    match rule {
        SelectionRule::Min => cv.lambda_min,
        SelectionRule::OneSe => cv.lambda_1se,
    }
}
