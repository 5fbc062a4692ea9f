//! Augmented-Lagrangian dual descent with an iterative-thresholding inner
//! loop, plus the non-robust sparse log-contrast fit and the two-stage refit.
//!
//! The inner problem is
//! `min (1/2n)‖ỹ − X̃θ̃‖² + P_λ(θ̃)` with `θ̃ = [θ; γ]`,
//! `ỹ = [y; −√n·η]` and `X̃ = [[X·P_C⊥, √n·I], [√n·Cᵀ, 0]]`; γ here is the
//! mean shift divided by `√n`. Each sweep takes the gradient step
//! `X̃ᵀỹ/k₀ + (I − X̃ᵀX̃/k₀)θ̃` and applies the proximity operator of
//! `(n/k₀)·P_λ`, so fixed points are exact minimizers of the inner problem.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::composition::ConstraintMatrix;
use crate::error::{Error, Result};
use crate::linalg::{column_basis, complement_basis, inf_norm, lstsq, sample_sd, select_rows_vec};
use crate::penalty::{kappa_scalars, PenaltyKind, PenaltySpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative change of the iterate that ends the inner loop.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// `‖Cᵀθ‖∞` that ends the outer loop.
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    /// `k₀ = margin · λmax(X̃ᵀX̃)`.
    pub k0_margin: f64,
    pub power_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            inner_tol: 1e-6,
            inner_max_iter: 1000,
            outer_tol: 1e-6,
            outer_max_iter: 200,
            k0_margin: 1.05,
            power_tol: 1e-6,
        }
    }
}

/// `y = Xβ + γ + ε` subject to `Cᵀβ = 0`, on a normalized design.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub constraint: ConstraintMatrix,
    /// Over `δ = [γ; β]`; the γ block is absent without a mean shift.
    pub penalty: PenaltySpec,
    pub mean_shift: bool,
}

impl RegressionProblem {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        constraint: ConstraintMatrix,
        penalty: PenaltySpec,
        mean_shift: bool,
    ) -> Result<Self> {
        let (n, q) = x.shape();
        let n_shift = if mean_shift { n } else { 0 };
        if y.len() != n {
            return Err(Error::Dimension(format!("X has {n} rows, y has {}", y.len())));
        }
        if constraint.n_coef() != q {
            return Err(Error::Dimension(format!(
                "X has {q} columns, constraint {} rows",
                constraint.n_coef()
            )));
        }
        if penalty.len() != n_shift + q {
            return Err(Error::Dimension(format!(
                "penalty covers {} coordinates, expected {}",
                penalty.len(),
                n_shift + q
            )));
        }
        Ok(Self { x, y, constraint, penalty, mean_shift })
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_shift(&self) -> usize {
        if self.mean_shift {
            self.n_samples()
        } else {
            0
        }
    }

    /// Coefficient indices exempt from the penalty.
    pub fn unpenalized_coef(&self) -> Vec<usize> {
        let ns = self.n_shift();
        (0..self.n_coef()).filter(|&j| !self.penalty.penalized[ns + j]).collect()
    }

    /// Row subset; κ is recomputed for the smaller sample size and the γ
    /// block of the penalty follows the selected rows.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let n_old = self.n_samples();
        let q = self.n_coef();
        let x = self.x.select_rows(rows);
        let y = select_rows_vec(&self.y, rows);
        let mut idx: Vec<usize> = if self.mean_shift { rows.to_vec() } else { Vec::new() };
        let ns_old = if self.mean_shift { n_old } else { 0 };
        idx.extend((0..q).map(|j| ns_old + j));
        let mut penalty = self.penalty.select(&idx);
        let (k1, _) = kappa_scalars(rows.len(), q);
        if self.mean_shift {
            for k in penalty.kappa.iter_mut().take(rows.len()) {
                *k = k1;
            }
        }
        Self { x, y, constraint: self.constraint.clone(), penalty, mean_shift: self.mean_shift }
    }

    /// Same problem with a different penalty (kind, α or weights).
    pub fn with_penalty(&self, penalty: PenaltySpec) -> Result<Self> {
        Self::new(self.x.clone(), self.y.clone(), self.constraint.clone(), penalty, self.mean_shift)
    }
}

/// Minimal matrix-free interface used by the power iteration and ISTA.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
    fn apply_t(&self, v: &DVector<f64>) -> DVector<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self * v
    }
    fn apply_t(&self, v: &DVector<f64>) -> DVector<f64> {
        self.tr_mul(v)
    }
}

/// Structured form of the augmented design `X̃`.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    xp: DMatrix<f64>,
    c: DMatrix<f64>,
    root_n: f64,
    mean_shift: bool,
}

impl AugmentedSystem {
    pub fn new(problem: &RegressionProblem) -> Self {
        let xp = &problem.x * &problem.constraint.proj_comp;
        Self {
            xp,
            c: problem.constraint.c.clone(),
            root_n: (problem.n_samples() as f64).sqrt(),
            mean_shift: problem.mean_shift,
        }
    }

    fn n(&self) -> usize {
        self.xp.nrows()
    }

    fn q(&self) -> usize {
        self.xp.ncols()
    }

    fn k(&self) -> usize {
        self.c.ncols()
    }

    /// `ỹ = [y; −√n·η]`.
    pub fn augmented_response(&self, y: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n() + self.k());
        out.rows_mut(0, self.n()).copy_from(y);
        out.rows_mut(self.n(), self.k()).copy_from(&(eta * -self.root_n));
        out
    }
}

impl LinearOperator for AugmentedSystem {
    fn nrows(&self) -> usize {
        self.n() + self.k()
    }

    fn ncols(&self) -> usize {
        self.q() + if self.mean_shift { self.n() } else { 0 }
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let (n, q, k) = (self.n(), self.q(), self.k());
        let theta = v.rows(0, q);
        let mut out = DVector::zeros(n + k);
        {
            let mut top = out.rows_mut(0, n);
            top.gemv(1.0, &self.xp, &theta, 0.0);
            if self.mean_shift {
                top.axpy(self.root_n, &v.rows(q, n), 1.0);
            }
        }
        if k > 0 {
            out.rows_mut(n, k).gemv_tr(self.root_n, &self.c, &theta, 0.0);
        }
        out
    }

    fn apply_t(&self, r: &DVector<f64>) -> DVector<f64> {
        let (n, q, k) = (self.n(), self.q(), self.k());
        let top = r.rows(0, n);
        let mut out = DVector::zeros(self.ncols());
        {
            let mut th = out.rows_mut(0, q);
            th.gemv_tr(1.0, &self.xp, &top, 0.0);
            if k > 0 {
                th.gemv(self.root_n, &self.c, &r.rows(n, k), 1.0);
            }
        }
        if self.mean_shift {
            out.rows_mut(q, n).copy_from(&(top * self.root_n));
        }
        out
    }
}

/// Explicit `(X̃, ỹ)` for a mean-shift problem, columns ordered `[θ; γ]`.
pub fn assemble_augmented(
    x: &DMatrix<f64>,
    proj_comp: &DMatrix<f64>,
    c: &DMatrix<f64>,
    eta: &DVector<f64>,
    y: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (n, q) = x.shape();
    let k = c.ncols();
    let rn = (n as f64).sqrt();
    let mut xt = DMatrix::zeros(n + k, q + n);
    xt.view_mut((0, 0), (n, q)).copy_from(&(x * proj_comp));
    xt.view_mut((0, q), (n, n)).copy_from(&(DMatrix::<f64>::identity(n, n) * rn));
    xt.view_mut((n, 0), (k, q)).copy_from(&(c.transpose() * rn));
    let mut yt = DVector::zeros(n + k);
    yt.rows_mut(0, n).copy_from(y);
    yt.rows_mut(n, k).copy_from(&(eta * -rn));
    (xt, yt)
}

/// Largest eigenvalue of `AᵀA` by power iteration from a fixed start.
pub fn largest_eigenvalue<O: LinearOperator>(op: &O, rel_tol: f64, max_iter: usize) -> f64 {
    let m = op.ncols();
    if m == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = DVector::from_fn(m, |_, _| rng.random::<f64>() + 0.5);
    v /= v.norm();
    let mut lam = 0.0;
    for _ in 0..max_iter {
        let w = op.apply_t(&op.apply(&v));
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lam).abs() <= rel_tol * next.abs() {
            return next.max(norm);
        }
        lam = next;
    }
    lam
}

/// `k₀ = 1.05 · λmax(X̃ᵀX̃)`.
pub fn spectral_bound<O: LinearOperator>(op: &O) -> f64 {
    let opts = SolverOptions::default();
    opts.k0_margin * largest_eigenvalue(op, opts.power_tol, 100_000)
}

/// Maps each position of `θ̃ = [θ; γ]` to its coordinate in `δ = [γ; β]`.
fn theta_to_delta_index(q: usize, n_shift: usize) -> Vec<usize> {
    (0..q).map(|j| n_shift + j).chain(0..n_shift).collect()
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub theta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Penalty bookkeeping for [`ista_inner`].
#[derive(Debug, Clone, Copy)]
pub struct InnerPenalty<'a> {
    pub spec: &'a PenaltySpec,
    /// `index[j]` is the penalty coordinate of iterate position `j`.
    pub index: &'a [usize],
    pub lambda: f64,
    /// Loss normalization `n` in `(1/2n)‖ỹ − X̃θ̃‖²`.
    pub loss_scale: f64,
}

/// One thresholded gradient step.
pub fn ista_step<O: LinearOperator>(
    op: &O,
    ytil: &DVector<f64>,
    pen: InnerPenalty<'_>,
    k0: f64,
    theta: &DVector<f64>,
) -> DVector<f64> {
    let resid = ytil - op.apply(theta);
    let mut u = op.apply_t(&resid);
    u /= k0;
    u += theta;
    let step = pen.loss_scale / k0;
    for (j, v) in u.iter_mut().enumerate() {
        *v = pen.spec.prox_scaled(*v, pen.lambda, pen.index[j], step);
    }
    u
}

/// `(1/2n)‖ỹ − X̃θ̃‖² + P_λ(θ̃)`.
pub fn inner_objective<O: LinearOperator>(
    op: &O,
    ytil: &DVector<f64>,
    pen: InnerPenalty<'_>,
    theta: &DVector<f64>,
) -> f64 {
    let r = ytil - op.apply(theta);
    let pv: f64 = theta
        .iter()
        .enumerate()
        .map(|(j, &t)| pen.spec.coordinate_value(t, pen.lambda, pen.index[j]))
        .sum();
    r.norm_squared() / (2.0 * pen.loss_scale) + pv
}

/// Iterate [`ista_step`] from `start` until the relative change
/// `‖Δ‖∞ / max(1, ‖θ̃‖∞)` drops to `tol` or `max_iter` sweeps are spent.
pub fn ista_inner<O: LinearOperator>(
    op: &O,
    ytil: &DVector<f64>,
    pen: InnerPenalty<'_>,
    k0: f64,
    start: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<InnerOutcome> {
    let mut theta = start.clone();
    for it in 1..=max_iter {
        let next = ista_step(op, ytil, pen, k0, &theta);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(it));
        }
        let change = (&next - &theta).amax();
        let scale = next.amax().max(1.0);
        theta = next;
        if change <= tol * scale {
            return Ok(InnerOutcome { theta, iterations: it, converged: true });
        }
    }
    Ok(InnerOutcome { theta, iterations: max_iter, converged: false })
}

/// Starting point `δ = (β, γ)`; β on the fitting scale, γ in response units.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl Estimate {
    pub fn zeros(q: usize, n_shift: usize) -> Self {
        Self { beta: DVector::zeros(q), gamma: DVector::zeros(n_shift) }
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let gamma = if self.gamma.is_empty() {
            self.gamma.clone()
        } else {
            select_rows_vec(&self.gamma, rows)
        };
        Self { beta: self.beta.clone(), gamma }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Feasible coefficients on the fitting scale.
    pub beta: DVector<f64>,
    /// Unprojected primal block θ of the last inner solve.
    pub theta: DVector<f64>,
    /// Mean shift in response units.
    pub gamma: DVector<f64>,
    pub eta: DVector<f64>,
    pub lambda: f64,
    pub obj_trace: Vec<f64>,
    pub inner_iters: usize,
    pub outer_iters: usize,
    pub converged: bool,
    /// Every penalized coordinate is zero.
    pub null_model: bool,
    pub k0: f64,
}

impl FitResult {
    pub fn outliers(&self) -> Vec<usize> {
        (0..self.gamma.len()).filter(|&i| self.gamma[i] != 0.0).collect()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect()
    }

    pub fn objective(&self) -> f64 {
        self.obj_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Project `θ` onto `{β : Cᵀβ = 0}` without leaving the support of `θ`.
///
/// Entries that the projection sends to round-off level are removed from
/// the support and the projection is repeated.
pub fn support_projection(c: &DMatrix<f64>, theta: &DVector<f64>) -> DVector<f64> {
    let mut support: Vec<usize> = (0..theta.len()).filter(|&j| theta[j] != 0.0).collect();
    let mut out = DVector::zeros(theta.len());
    while !support.is_empty() {
        let cs = c.select_rows(&support);
        let ts = select_rows_vec(theta, &support);
        let u = column_basis(&cs);
        let proj = if u.ncols() == 0 { ts.clone() } else { &ts - &u * u.tr_mul(&ts) };
        let cutoff = 1e-12 * ts.amax();
        let kept: Vec<usize> =
            support.iter().zip(proj.iter()).filter(|(_, v)| v.abs() > cutoff).map(|(&j, _)| j).collect();
        if kept.len() == support.len() {
            out.fill(0.0);
            for (k, &j) in support.iter().enumerate() {
                out[j] = proj[k];
            }
            break;
        }
        support = kept;
    }
    out
}

/// `(1/2n)‖y − Xβ − γ‖² + P_λ([γ/√n; β])`, γ in response units.
pub fn objective(
    problem: &RegressionProblem,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    lam: f64,
) -> f64 {
    let n = problem.n_samples() as f64;
    let mut r = &problem.y - &problem.x * beta;
    if problem.mean_shift {
        r -= gamma;
    }
    let mut delta: Vec<f64> = if problem.mean_shift {
        gamma.iter().map(|g| g / n.sqrt()).collect()
    } else {
        Vec::new()
    };
    delta.extend(beta.iter().copied());
    r.norm_squared() / (2.0 * n) + problem.penalty.value(&delta, lam)
}

/// Dual-descent solver with precomputed operator and step constant.
#[derive(Debug, Clone)]
pub struct DualDescent<'a> {
    problem: &'a RegressionProblem,
    system: AugmentedSystem,
    index: Vec<usize>,
    k0: f64,
    opts: SolverOptions,
}

impl<'a> DualDescent<'a> {
    pub fn new(problem: &'a RegressionProblem, opts: SolverOptions) -> Self {
        let system = AugmentedSystem::new(problem);
        let k0 = opts.k0_margin * largest_eigenvalue(&system, opts.power_tol, 100_000);
        let index = theta_to_delta_index(problem.n_coef(), problem.n_shift());
        Self { problem, system, index, k0, opts }
    }

    /// Reuse a known step constant, e.g. one computed on a superset of rows.
    pub fn with_k0(problem: &'a RegressionProblem, k0: f64, opts: SolverOptions) -> Self {
        let system = AugmentedSystem::new(problem);
        let index = theta_to_delta_index(problem.n_coef(), problem.n_shift());
        Self { problem, system, index, k0, opts }
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn system(&self) -> &AugmentedSystem {
        &self.system
    }

    fn root_n(&self) -> f64 {
        (self.problem.n_samples() as f64).sqrt()
    }

    /// `θ̃ = [β; γ/√n]`.
    fn stack(&self, beta: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
        let q = self.problem.n_coef();
        let ns = self.problem.n_shift();
        let mut t = DVector::zeros(q + ns);
        t.rows_mut(0, q).copy_from(beta);
        if ns > 0 {
            t.rows_mut(q, ns).copy_from(&(gamma / self.root_n()));
        }
        t
    }

    pub fn inner_penalty(&self, lam: f64) -> InnerPenalty<'_> {
        InnerPenalty {
            spec: &self.problem.penalty,
            index: &self.index,
            lambda: lam,
            loss_scale: self.problem.n_samples() as f64,
        }
    }

    /// Iterate vector `θ̃` of a fit, for fixed-point checks.
    pub fn iterate_of(&self, fit: &FitResult) -> DVector<f64> {
        self.stack(&fit.theta, &fit.gamma)
    }

    /// Fit at `lam`. `init` is the robust starting point (zeros are fine
    /// for the elastic net); `warm` carries θ and η from a neighbouring fit.
    /// The hard-ridge kind always starts its primal iterate from `init`
    /// and reuses only η; later outer iterations continue from the
    /// previous iterate.
    pub fn fit(&self, lam: f64, init: &Estimate, warm: Option<&FitResult>) -> Result<FitResult> {
        let p = self.problem;
        let q = p.n_coef();
        let ns = p.n_shift();
        let k = p.constraint.n_constraints();
        if init.beta.len() != q || init.gamma.len() != ns {
            return Err(Error::Dimension(format!(
                "initial estimate has {}+{} entries, expected {q}+{ns}",
                init.beta.len(),
                init.gamma.len()
            )));
        }
        let restart = !p.penalty.kind.is_convex();
        let init_t = self.stack(&init.beta, &init.gamma);
        let mut theta_t = match warm {
            Some(w) if !restart => self.stack(&w.theta, &w.gamma),
            _ => init_t.clone(),
        };
        let mut eta = match warm {
            Some(w) if w.eta.len() == k => w.eta.clone(),
            _ => DVector::zeros(k),
        };
        let pen = self.inner_penalty(lam);
        let mut trace = Vec::new();
        let mut inner_total = 0;
        let mut converged = false;
        let mut outer = 0;
        let mut beta = DVector::zeros(q);
        let mut gamma = DVector::zeros(ns);
        while outer < self.opts.outer_max_iter {
            outer += 1;
            let ytil = self.system.augmented_response(&p.y, &eta);
            let inner = ista_inner(
                &self.system,
                &ytil,
                pen,
                self.k0,
                &theta_t,
                self.opts.inner_tol,
                self.opts.inner_max_iter,
            )?;
            inner_total += inner.iterations;
            theta_t = inner.theta;
            let theta = theta_t.rows(0, q).into_owned();
            let viol = p.constraint.c.tr_mul(&theta);
            eta += &viol;
            beta = support_projection(&p.constraint.c, &theta);
            gamma = theta_t.rows(q, ns) * self.root_n();
            trace.push(objective(p, &beta, &gamma, lam));
            if k == 0 || inf_norm(&viol) <= self.opts.outer_tol {
                converged = true;
                break;
            }
        }
        let null_model = (0..q).all(|j| !p.penalty.penalized[ns + j] || beta[j] == 0.0)
            && gamma.iter().all(|&g| g == 0.0);
        Ok(FitResult {
            beta,
            theta: theta_t.rows(0, q).into_owned(),
            gamma,
            eta,
            lambda: lam,
            obj_trace: trace,
            inner_iters: inner_total,
            outer_iters: outer,
            converged,
            null_model,
            k0: self.k0,
        })
    }
}

/// One-shot fit at `lam` from `init`.
pub fn dual_descent_fit(
    problem: &RegressionProblem,
    lam: f64,
    init: &Estimate,
    opts: SolverOptions,
) -> Result<FitResult> {
    DualDescent::new(problem, opts).fit(lam, init, None)
}

// ---------------------------------------------------------------------------
// Non-robust sparse log-contrast model

/// Settings of the ℓ1-penalized constrained fit and its λ selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlcmOptions {
    pub n_lambda: usize,
    /// `λmin / λmax` of the grid.
    pub lambda_ratio: f64,
    pub folds: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for SlcmOptions {
    fn default() -> Self {
        Self { n_lambda: 20, lambda_ratio: 1e-2, folds: 5, seed: 0, solver: SolverOptions::default() }
    }
}

/// Constrained lasso problem (no mean shift, elastic net with α = 1).
pub fn slcm_problem(
    x: DMatrix<f64>,
    y: DVector<f64>,
    constraint: ConstraintMatrix,
    unpenalized: &[usize],
) -> Result<RegressionProblem> {
    let q = x.ncols();
    let penalty = PenaltySpec::new(PenaltyKind::ElasticNet, 1.0, 0, q, unpenalized)?;
    RegressionProblem::new(x, y, constraint, penalty, false)
}

/// Smallest λ at which every penalized coefficient of the constrained
/// lasso is zero, from the gradient at the unpenalized-only fit.
pub fn slcm_lambda_max(problem: &RegressionProblem) -> f64 {
    let free = problem.unpenalized_coef();
    let n = problem.n_samples() as f64;
    let resid = if free.is_empty() {
        problem.y.clone()
    } else {
        let xf = problem.x.select_columns(&free);
        let coef = lstsq(&xf, &problem.y);
        &problem.y - xf * coef
    };
    let grad = problem.constraint.proj_comp.clone() * problem.x.tr_mul(&resid) / n;
    let mut lmax: f64 = 0.0;
    for j in 0..problem.n_coef() {
        if problem.penalty.penalized[j] {
            lmax = lmax.max(grad[j].abs() / problem.penalty.kappa[j]);
        }
    }
    lmax
}

/// Constrained lasso at a single `lam`, started from `start`.
pub fn slcm_at(
    problem: &RegressionProblem,
    lam: f64,
    start: &DVector<f64>,
    k0: Option<f64>,
    opts: &SolverOptions,
) -> Result<FitResult> {
    let solver = match k0 {
        Some(k0) => DualDescent::with_k0(problem, k0, *opts),
        None => DualDescent::new(problem, *opts),
    };
    let init = Estimate { beta: start.clone(), gamma: DVector::zeros(0) };
    solver.fit(lam, &init, None)
}

/// Descending log-linear grid from `lmax` to `ratio·lmax`.
pub fn log_grid(lmax: f64, ratio: f64, n_points: usize) -> Vec<f64> {
    if n_points <= 1 {
        return vec![lmax];
    }
    let step = ratio.ln() / (n_points - 1) as f64;
    (0..n_points).map(|i| lmax * (step * i as f64).exp()).collect()
}

/// Shuffle `0..n` with `seed` and cut into `k` contiguous blocks.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos * k / n;
    }
    fold
}

/// Sparse log-contrast fit with λ chosen from `grid` (or the default grid)
/// by k-fold cross-validation on squared prediction error.
#[derive(Debug, Clone)]
pub struct SlcmFit {
    pub beta: DVector<f64>,
    pub lambda: f64,
    pub cv_error: Vec<f64>,
    pub grid: Vec<f64>,
}

pub fn slcm_path(
    problem: &RegressionProblem,
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<FitResult>> {
    let solver = DualDescent::new(problem, *opts);
    let init = Estimate::zeros(problem.n_coef(), 0);
    let mut out: Vec<FitResult> = Vec::with_capacity(grid.len());
    for &lam in grid {
        let fit = solver.fit(lam, &init, out.last())?;
        out.push(fit);
    }
    Ok(out)
}

pub fn slcm_fit(problem: &RegressionProblem, grid: Option<&[f64]>, opts: &SlcmOptions) -> Result<SlcmFit> {
    let n = problem.n_samples();
    let grid: Vec<f64> = match grid {
        Some(g) => g.to_vec(),
        None => log_grid(slcm_lambda_max(problem).max(1e-12), opts.lambda_ratio, opts.n_lambda),
    };
    let k = opts.folds.min(n);
    let lambda = if grid.len() == 1 || k < 2 {
        grid[0]
    } else {
        let fold = fold_assignment(n, k, opts.seed);
        let mut err = vec![0.0; grid.len()];
        for f in 0..k {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
            let sub = problem.subset(&train);
            let path = slcm_path(&sub, &grid, &opts.solver)?;
            let xt = problem.x.select_rows(&test);
            let yt = select_rows_vec(&problem.y, &test);
            for (e, fit) in err.iter_mut().zip(&path) {
                *e += (&yt - &xt * &fit.beta).norm_squared() / n as f64;
            }
        }
        let best = argmin_prefer_first(&err);
        let lam = grid[best];
        return slcm_finish(problem, grid, err, lam, opts);
    };
    slcm_finish(problem, grid, Vec::new(), lambda, opts)
}

fn slcm_finish(
    problem: &RegressionProblem,
    grid: Vec<f64>,
    cv_error: Vec<f64>,
    lambda: f64,
    opts: &SlcmOptions,
) -> Result<SlcmFit> {
    // Walk the path down to the selected value for a warm start.
    let upto: Vec<f64> = grid.iter().copied().take_while(|&l| l >= lambda).collect();
    let path = slcm_path(problem, &upto, &opts.solver)?;
    let beta = path.last().map(|f| f.beta.clone()).unwrap_or_else(|| DVector::zeros(problem.n_coef()));
    Ok(SlcmFit { beta, lambda, cv_error, grid })
}

/// Index of the smallest finite value; ties go to the earliest index.
pub(crate) fn argmin_prefer_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] || (!values[best].is_finite() && v.is_finite()) {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Two-stage refit

#[derive(Debug, Clone)]
pub struct Refit {
    /// Coefficients on the fitting scale.
    pub beta: DVector<f64>,
    pub support: Vec<usize>,
    pub inliers: Vec<usize>,
    /// Samples with residual beyond three standard deviations.
    pub outliers: Vec<usize>,
    pub residual_sd: f64,
}

/// Unpenalized constrained least squares on a row and column subset.
pub fn constrained_refit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    c: &DMatrix<f64>,
    rows: &[usize],
    cols: &[usize],
) -> DVector<f64> {
    let mut beta = DVector::zeros(x.ncols());
    if cols.is_empty() || rows.is_empty() {
        return beta;
    }
    let xs = x.select_rows(rows).select_columns(cols);
    let ys = select_rows_vec(y, rows);
    let cs = c.select_rows(cols);
    let basis = complement_basis(&cs);
    let coef = basis.clone() * lstsq(&(xs * basis), &ys);
    for (k, &j) in cols.iter().enumerate() {
        beta[j] = coef[k];
    }
    beta
}

/// Refit on the support of `fit.beta` using samples with zero mean shift,
/// reclassify every sample by the three-SD rule, then refit on the final
/// inlier set.
pub fn refit_inliers(problem: &RegressionProblem, fit: &FitResult) -> Refit {
    let n = problem.n_samples();
    let mut support = fit.support();
    for j in problem.unpenalized_coef() {
        if !support.contains(&j) {
            support.push(j);
        }
    }
    support.sort_unstable();
    let first: Vec<usize> = if fit.gamma.is_empty() {
        (0..n).collect()
    } else {
        (0..n).filter(|&i| fit.gamma[i] == 0.0).collect()
    };
    let c = &problem.constraint.c;
    let b1 = constrained_refit(&problem.x, &problem.y, c, &first, &support);
    let resid = &problem.y - &problem.x * &b1;
    let inlier_resid: Vec<f64> = first.iter().map(|&i| resid[i]).collect();
    let sd = sample_sd(&inlier_resid);
    let outliers: Vec<usize> = (0..n).filter(|&i| resid[i].abs() > 3.0 * sd).collect();
    let inliers: Vec<usize> = (0..n).filter(|&i| resid[i].abs() <= 3.0 * sd).collect();
    let beta = constrained_refit(&problem.x, &problem.y, c, &inliers, &support);
    Refit { beta, support, inliers, outliers, residual_sd: sd }
}
