//! End-to-end estimation: robust start, λ path, robust cross-validation,
//! final fit and two-stage refit.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::composition::{ConstraintMatrix, Design};
use crate::error::Result;
use crate::init::{robust_init, InitOptions, RobustInit};
use crate::penalty::{PenaltyKind, PenaltySpec, DEFAULT_ALPHA};
use crate::selection::{
    lambda_grid, robust_cv, select_lambda, CvOptions, CvResult, GridOptions, LambdaPath,
    SelectionRule,
};
use crate::solver::{
    refit_inliers, slcm_fit, slcm_problem, DualDescent, Estimate, FitResult, Refit,
    RegressionProblem, SlcmOptions, SolverOptions,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkflowConfig {
    pub kind: PenaltyKind,
    pub alpha: f64,
    pub grid: GridOptions,
    pub cv: CvOptions,
    pub rule: SelectionRule,
    pub init: InitOptions,
    pub solver: SolverOptions,
    /// Fit at this λ instead of cross-validating.
    pub lambda: Option<f64>,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            kind: PenaltyKind::AdaptiveElasticNet,
            alpha: DEFAULT_ALPHA,
            grid: GridOptions::default(),
            cv: CvOptions::default(),
            rule: SelectionRule::Min,
            init: InitOptions::default(),
            solver: SolverOptions::default(),
            lambda: None,
        }
    }
}

impl WorkflowConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.cv.seed = seed;
        self.init.slcm.seed = seed;
        self
    }
}

/// Design-scale problem pieces shared by every estimator.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub design: Design,
    /// Constraint in fitting coordinates.
    pub constraint: ConstraintMatrix,
    pub y: DVector<f64>,
    pub unpenalized: Vec<usize>,
}

impl Prepared {
    pub fn new(design: Design, constraint: &ConstraintMatrix, y: DVector<f64>) -> Result<Self> {
        let constraint = design.rescale_constraint(constraint)?;
        let unpenalized = design.intercept.into_iter().collect();
        Ok(Self { design, constraint, y, unpenalized })
    }

    /// Constrained lasso problem without mean shift.
    pub fn base_problem(&self) -> Result<RegressionProblem> {
        slcm_problem(self.design.x.clone(), self.y.clone(), self.constraint.clone(), &self.unpenalized)
    }

    /// Mean-shift problem with the given penalty kind and optional weights.
    pub fn shift_problem(
        &self,
        kind: PenaltyKind,
        alpha: f64,
        weights: Option<&[f64]>,
    ) -> Result<RegressionProblem> {
        let (n, q) = self.design.x.shape();
        let mut spec = PenaltySpec::new(kind, alpha, n, q, &self.unpenalized)?;
        if let Some(w) = weights {
            spec = spec.with_weights(w.to_vec())?;
        }
        RegressionProblem::new(self.design.x.clone(), self.y.clone(), self.constraint.clone(), spec, true)
    }

    pub fn robust_init(&self, opts: &InitOptions) -> Result<RobustInit> {
        robust_init(&self.base_problem()?, opts)
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub problem: RegressionProblem,
    pub init: Estimate,
    pub path: Option<LambdaPath>,
    pub cv: Option<CvResult>,
    pub fit: FitResult,
    pub refit: Refit,
    /// Final-fit coefficients on the raw column scale.
    pub beta_original: DVector<f64>,
    /// Two-stage coefficients on the raw column scale.
    pub refit_original: DVector<f64>,
}

/// Full robust workflow. `init` is reused when given, otherwise computed
/// for the penalty kinds that need it.
pub fn run_workflow(
    prep: &Prepared,
    config: &WorkflowConfig,
    init: Option<&RobustInit>,
) -> Result<Analysis> {
    let q = prep.design.n_coef();
    let n = prep.design.n_samples();
    let owned;
    let init = match init {
        Some(i) => Some(i),
        None if config.kind.needs_robust_init() => {
            owned = prep.robust_init(&config.init)?;
            Some(&owned)
        }
        None => None,
    };
    let weights = match (config.kind, init) {
        (PenaltyKind::AdaptiveElasticNet, Some(i)) => Some(i.weights.as_slice()),
        _ => None,
    };
    let problem = prep.shift_problem(config.kind, config.alpha, weights)?;
    let start = match (config.kind, init) {
        (PenaltyKind::ElasticNet, _) | (_, None) => Estimate::zeros(q, n),
        (_, Some(i)) => i.estimate(),
    };

    let (path, cv, fit) = match config.lambda {
        Some(lam) => {
            let fit = DualDescent::new(&problem, config.solver).fit(lam, &start, None)?;
            (None, None, fit)
        }
        None => {
            let (path, fits) = lambda_grid(&problem, &start, &config.grid, &config.solver)?;
            let cv_opts = CvOptions { solver: config.solver, ..config.cv };
            let cv = robust_cv(&problem, &path.values, &start, &cv_opts)?;
            let lam = select_lambda(&cv, config.rule);
            let idx = path.values.iter().position(|&v| v == lam).unwrap_or(0);
            (Some(path), Some(cv), fits[idx].clone())
        }
    };
    let refit = refit_inliers(&problem, &fit);
    let beta_original = prep.design.to_original(&fit.beta);
    let refit_original = prep.design.to_original(&refit.beta);
    Ok(Analysis { problem, init: start, path, cv, fit, refit, beta_original, refit_original })
}

/// Non-robust baseline: cross-validated constrained lasso, then a
/// least-squares refit on its support over all samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Baseline {
    pub lambda: f64,
    pub beta_original: Vec<f64>,
    pub refit_original: Vec<f64>,
}

pub fn run_baseline(prep: &Prepared, opts: &SlcmOptions) -> Result<Baseline> {
    let base = prep.base_problem()?;
    let fit = slcm_fit(&base, None, opts)?;
    let n = prep.design.n_samples();
    let mut support: Vec<usize> = (0..fit.beta.len()).filter(|&j| fit.beta[j] != 0.0).collect();
    for &j in &prep.unpenalized {
        if !support.contains(&j) {
            support.push(j);
        }
    }
    support.sort_unstable();
    let all: Vec<usize> = (0..n).collect();
    let refit = crate::solver::constrained_refit(&base.x, &base.y, &base.constraint.c, &all, &support);
    Ok(Baseline {
        lambda: fit.lambda,
        beta_original: prep.design.to_original(&fit.beta).iter().copied().collect(),
        refit_original: prep.design.to_original(&refit).iter().copied().collect(),
    })
}
