//! Robust starting point from principal sensitivity components.
//!
//! Starting from a leverage-trimmed active set, each round fits the sparse
//! log-contrast model, builds the sensitivity matrix on the fitted support,
//! and tries the subsamples that drop the most extreme entries of every
//! sensitivity component. The candidate with the smallest robust residual
//! scale defines the next clean set.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{column_basis, complement_basis, median};
use crate::penalty::{adaptive_weights, MAX_ADAPTIVE_WEIGHT};
use crate::solver::{
    constrained_refit, slcm_at, slcm_fit, DualDescent, Estimate, RegressionProblem, SlcmOptions,
};

/// Normal-consistency factor of the median absolute deviation.
pub const MAD_CONSISTENCY: f64 = 1.4826;

/// Leverage above which a sample is left out of the sensitivity matrix.
const PERFECT_LEVERAGE: f64 = 1.0 - 1e-8;

/// Estimator refitted on every candidate subsample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMethod {
    /// Sparse log-contrast model.
    #[default]
    Slcm,
    /// Unpenalized constrained least squares.
    Lcm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    /// Fraction of the active set dropped by each candidate.
    pub tau: f64,
    /// Leverage quantile defining the first active set.
    pub alpha1: f64,
    /// Clean-set cutoff in units of the robust scale.
    pub c1: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub initial_scale: f64,
    pub max_components: usize,
    pub method: InitMethod,
    pub slcm: SlcmOptions,
    /// Exponent of the adaptive weights.
    pub nu: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            tau: 0.25,
            alpha1: 0.9,
            c1: 2.0,
            max_iter: 20,
            tol: 1e-4,
            initial_scale: 1e8,
            max_components: 25,
            method: InitMethod::Slcm,
            slcm: SlcmOptions::default(),
            nu: 1.0,
        }
    }
}

/// Diagonal of the orthogonal projector onto the column space of `z`.
pub fn leverage(z: &DMatrix<f64>) -> DVector<f64> {
    let u = column_basis(z);
    DVector::from_fn(z.nrows(), |i, _| u.row(i).norm_squared())
}

/// `R = H W² H` with `W = diag(ε / (1 − diag H))`.
///
/// Samples with leverage numerically equal to one get zero weight.
pub fn sensitivity_matrix(residuals: &DVector<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = residuals.len();
    if h.shape() != (n, n) {
        return Err(Error::Dimension(format!("projector is {:?}, residuals {n}", h.shape())));
    }
    let mut w2 = DVector::zeros(n);
    for i in 0..n {
        let hi = h[(i, i)];
        if hi >= PERFECT_LEVERAGE {
            warn!("sample {i} has leverage {hi:.3e}; left out of the sensitivity matrix");
            continue;
        }
        w2[i] = (residuals[i] / (1.0 - hi)).powi(2);
    }
    let mut hw = h.clone();
    for j in 0..n {
        hw.column_mut(j).scale_mut(w2[j]);
    }
    let r = &hw * h;
    Ok((&r + r.transpose()) * 0.5)
}

/// Eigenvectors of `r` with eigenvalue above `1e-10·λmax`, by decreasing
/// eigenvalue, at most `cap` of them. Each is signed so that its
/// largest-magnitude entry is positive.
pub fn psc_components(r: &DMatrix<f64>, cap: usize) -> Vec<DVector<f64>> {
    if r.is_empty() {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(r.clone());
    let lmax = eig.eigenvalues.max();
    if !(lmax > 0.0) {
        return Vec::new();
    }
    let mut order: Vec<usize> =
        (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > 1e-10 * lmax).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(cap);
    order
        .into_iter()
        .map(|i| {
            let mut u = eig.eigenvectors.column(i).into_owned();
            let lead = u.iamax();
            if u[lead] < 0.0 {
                u.neg_mut();
            }
            u
        })
        .collect()
}

/// Remaining members of `active` after dropping the `m` positions with the
/// largest `u`, the smallest `u` and the largest `|u|`. Ties drop the
/// lowest position first. `u[k]` belongs to `active[k]`.
pub fn candidate_subsamples(u: &DVector<f64>, m: usize, active: &[usize]) -> [Vec<usize>; 3] {
    assert_eq!(u.len(), active.len(), "component length must match the active set");
    let keep_after = |key: &dyn Fn(f64) -> f64| -> Vec<usize> {
        let mut pos: Vec<usize> = (0..u.len()).collect();
        pos.sort_by(|&a, &b| key(u[b]).total_cmp(&key(u[a])).then(a.cmp(&b)));
        let mut dropped = vec![false; u.len()];
        for &k in pos.iter().take(m) {
            dropped[k] = true;
        }
        (0..u.len()).filter(|&k| !dropped[k]).map(|k| active[k]).collect()
    };
    [keep_after(&|v| v), keep_after(&|v| -v), keep_after(&|v: f64| v.abs())]
}

/// `1.4826 · median(|r − median(r)|)`.
pub fn m_scale(residuals: &[f64]) -> f64 {
    if residuals.is_empty() {
        return f64::NAN;
    }
    let med = median(residuals);
    let dev: Vec<f64> = residuals.iter().map(|r| (r - med).abs()).collect();
    MAD_CONSISTENCY * median(&dev)
}

/// Outcome of one sensitivity round.
#[derive(Debug, Clone)]
pub struct PscState {
    /// Next active set: samples with full-data residual below `C₁·scale`.
    pub active: Vec<usize>,
    pub scale: f64,
    /// Winning coefficients on the fitting scale.
    pub beta: DVector<f64>,
    /// Full-sample residuals of `beta`.
    pub residuals: DVector<f64>,
    /// Number of candidate subsamples evaluated.
    pub n_candidates: usize,
}

/// Fits the chosen initial estimator on row subsets of a base problem.
struct SubsetFitter<'a> {
    base: &'a RegressionProblem,
    opts: &'a InitOptions,
    lambda: f64,
    k0: f64,
}

impl SubsetFitter<'_> {
    fn fit(&self, rows: &[usize], start: &DVector<f64>) -> Result<DVector<f64>> {
        let all: Vec<usize> = (0..self.base.n_coef()).collect();
        match self.opts.method {
            InitMethod::Lcm => Ok(constrained_refit(
                &self.base.x,
                &self.base.y,
                &self.base.constraint.c,
                rows,
                &all,
            )),
            InitMethod::Slcm => {
                let sub = self.base.subset(rows);
                Ok(slcm_at(&sub, self.lambda, start, Some(self.k0), &self.opts.slcm.solver)?.beta)
            }
        }
    }

    fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.base.y - &self.base.x * beta
    }
}

/// One round of the sensitivity analysis on `active`.
///
/// `base` is the constrained lasso problem on all samples (no mean shift)
/// and `lambda` the penalty level of every sparse fit in the round.
pub fn psc_analysis(
    base: &RegressionProblem,
    active: &[usize],
    lambda: f64,
    opts: &InitOptions,
) -> Result<PscState> {
    if active.is_empty() {
        return Err(Error::InvalidParameter("active set is empty".into()));
    }
    let sub = base.subset(active);
    let k0 = DualDescent::new(&sub, opts.slcm.solver).k0();
    let fitter = SubsetFitter { base, opts, lambda, k0 };
    let beta_bar = fitter.fit(active, &DVector::zeros(base.n_coef()))?;

    let mut support: Vec<usize> = (0..base.n_coef()).filter(|&j| beta_bar[j] != 0.0).collect();
    let mut eps_beta = beta_bar.clone();
    if support.is_empty() {
        support = (0..base.n_coef()).collect();
        eps_beta = constrained_refit(&base.x, &base.y, &base.constraint.c, active, &support);
    }
    let xa = base.x.select_rows(active).select_columns(&support);
    let reduced = xa * complement_basis(&base.constraint.c.select_rows(&support));
    let u = column_basis(&reduced);
    let h = &u * u.transpose();
    let resid_full = fitter.residuals(&eps_beta);
    let eps = DVector::from_iterator(active.len(), active.iter().map(|&i| resid_full[i]));
    let r = sensitivity_matrix(&eps, &h)?;
    let comps = psc_components(&r, opts.max_components.min(active.len()));

    let m = (active.len() as f64 * opts.tau).floor() as usize;
    let candidates: Vec<Vec<usize>> = comps
        .iter()
        .flat_map(|c| candidate_subsamples(c, m, active))
        .filter(|c| !c.is_empty())
        .collect();

    let incumbent_resid = fitter.residuals(&beta_bar);
    let incumbent_scale = m_scale(incumbent_resid.as_slice());
    let scored: Vec<Result<(f64, DVector<f64>, DVector<f64>)>> = candidates
        .par_iter()
        .map(|rows| {
            let beta = fitter.fit(rows, &beta_bar)?;
            let resid = fitter.residuals(&beta);
            Ok((m_scale(resid.as_slice()), beta, resid))
        })
        .collect();

    let mut best = (incumbent_scale, beta_bar, incumbent_resid);
    for cand in scored {
        let cand = cand?;
        if cand.0 < best.0 {
            best = cand;
        }
    }
    let (scale, beta, residuals) = best;
    let cutoff = opts.c1 * scale;
    let mut next: Vec<usize> = (0..base.n_samples()).filter(|&i| residuals[i].abs() < cutoff).collect();
    if next.is_empty() {
        warn!("clean set is empty at scale {scale:.3e}; keeping the current active set");
        next = active.to_vec();
    }
    Ok(PscState { active: next, scale, beta, residuals, n_candidates: candidates.len() + 1 })
}

/// Robust starting point `δ̈ = [β̈; γ̈]` and the derived adaptive weights.
#[derive(Debug, Clone)]
pub struct RobustInit {
    /// Coefficients on the fitting scale.
    pub beta: DVector<f64>,
    /// Full-sample residuals `y − Xβ̈`, in response units.
    pub gamma: DVector<f64>,
    /// `|δ̈|^{-ν}` over `δ = [γ/√n; β]`, capped.
    pub weights: Vec<f64>,
    pub scale: f64,
    pub clean: Vec<usize>,
    pub scale_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl RobustInit {
    pub fn estimate(&self) -> Estimate {
        Estimate { beta: self.beta.clone(), gamma: self.gamma.clone() }
    }
}

/// First active set: samples whose leverage is at most the `⌈n·α₁⌉`-th
/// smallest leverage.
pub fn leverage_trimmed(h: &DVector<f64>, alpha1: f64) -> Vec<usize> {
    let n = h.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = h.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let k = ((n as f64 * alpha1).ceil() as usize).clamp(1, n);
    let cut = sorted[k - 1];
    (0..n).filter(|&i| h[i] <= cut).collect()
}

/// Iterate [`psc_analysis`] until the scale settles, then refit on the
/// final clean set. The sparse fits share one λ, chosen by cross-validation
/// on the leverage-trimmed starting set.
///
/// `base` is the constrained lasso problem on all samples.
pub fn robust_init(base: &RegressionProblem, opts: &InitOptions) -> Result<RobustInit> {
    if !(opts.tau > 0.0 && opts.tau < 0.5) {
        return Err(Error::InvalidParameter(format!("tau must lie in (0, 0.5), got {}", opts.tau)));
    }
    if !(opts.alpha1 > 0.0 && opts.alpha1 <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha1 must lie in (0, 1], got {}", opts.alpha1)));
    }
    let n = base.n_samples();
    let reduced = &base.x * complement_basis(&base.constraint.c);
    let h = leverage(&reduced);
    let mut active = leverage_trimmed(&h, opts.alpha1);
    let lambda = match opts.method {
        InitMethod::Slcm => slcm_fit(&base.subset(&active), None, &opts.slcm)?.lambda,
        InitMethod::Lcm => 0.0,
    };
    let mut scale = opts.initial_scale;
    let mut trace = Vec::new();
    let mut visited: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let state = psc_analysis(base, &active, lambda, opts)?;
        trace.push(state.scale);
        let delta = (state.scale - scale).abs();
        scale = state.scale;
        if delta <= opts.tol {
            active = state.active;
            converged = true;
            break;
        }
        if let Some(pos) = visited.iter().position(|(a, _)| *a == state.active) {
            // The active sets cycle; keep the member with the smallest scale.
            let best = visited[pos..]
                .iter()
                .chain(std::iter::once(&(state.active.clone(), state.scale)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .cloned()
                .expect("nonempty cycle");
            converged = pos + 1 == visited.len();
            if !converged {
                warn!("active sets cycle after {iterations} rounds");
            }
            (active, scale) = best;
            break;
        }
        visited.push((state.active.clone(), state.scale));
        active = state.active;
    }

    let k0 = DualDescent::new(base, opts.slcm.solver).k0();
    let fitter = SubsetFitter { base, opts, lambda, k0 };
    let beta = fitter.fit(&active, &DVector::zeros(base.n_coef()))?;
    let gamma = &base.y - &base.x * &beta;
    let root_n = (n as f64).sqrt();
    let mut delta: Vec<f64> = gamma.iter().map(|g| g / root_n).collect();
    delta.extend(beta.iter().copied());
    let weights = adaptive_weights(&delta, opts.nu);
    debug_assert!(weights.iter().all(|&w| w <= MAX_ADAPTIVE_WEIGHT));
    Ok(RobustInit { beta, gamma, weights, scale, clean: active, scale_trace: trace, iterations, converged })
}
