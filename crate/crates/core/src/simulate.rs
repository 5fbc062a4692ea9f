//! Synthetic compositional data with planted outliers and scoring of the
//! fitted models.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::{build_design, log_transform, total_sum_normalize, ConstraintMatrix};
use crate::error::{Error, Result};
use crate::penalty::PenaltyKind;
use crate::workflow::{run_baseline, run_workflow, Prepared, WorkflowConfig};

/// Group boundaries of the subcomposition constraint.
pub const GROUP_BOUNDS: [usize; 5] = [0, 10, 16, 20, 23];

/// Intercept of the true coefficient vector.
pub const BETA0: f64 = 0.5;

const BETA_HEAD: [f64; 16] =
    [1.0, -0.8, 0.4, 0.0, 0.0, -0.6, 0.0, 0.0, 0.0, 0.0, -1.5, 0.0, 1.2, 0.0, 0.0, 0.3];

/// Constant added to the inflated taxon of each group.
const LEVERAGE_BOOST: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Corruption {
    /// Add `shift·σ` to the first `O` responses.
    #[default]
    Shift,
    /// Swap the `O/2` largest responses with the `O/2` smallest.
    Swap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p: usize,
    pub outliers: usize,
    /// Shift in units of the noise SD.
    pub shift: f64,
    pub leveraged: bool,
    pub snr: f64,
    pub replicates: usize,
    pub seed: u64,
    pub corruption: Corruption,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 200,
            p: 100,
            outliers: 20,
            shift: 8.0,
            leveraged: false,
            snr: 3.0,
            replicates: 20,
            seed: 0,
            corruption: Corruption::Shift,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < GROUP_BOUNDS[4] {
            return Err(Error::InvalidParameter(format!("p must be at least 23, got {}", self.p)));
        }
        if 2 * self.outliers > self.n {
            return Err(Error::InvalidParameter(format!(
                "{} outliers exceed half of {} samples",
                self.outliers, self.n
            )));
        }
        if !(self.shift > 0.0) || !(self.snr > 0.0) {
            return Err(Error::InvalidParameter("shift and snr must be positive".into()));
        }
        Ok(())
    }
}

/// Independent stream for replicate `r` of a base seed.
pub fn replicate_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

/// `Σᵢⱼ = 0.5^|i−j|`.
pub fn ar1_covariance(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| 0.5f64.powi(i.abs_diff(j) as i32))
}

/// Log-mean vector: `log(p/2)` for the first five taxa, zero otherwise.
pub fn log_mean(p: usize) -> DVector<f64> {
    DVector::from_fn(p, |i, _| if i < 5 { (p as f64 / 2.0).ln() } else { 0.0 })
}

/// `n` lognormal count vectors.
pub fn gen_covariates<R: Rng>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    let l = Cholesky::new(ar1_covariance(p)).expect("AR(1) covariance is positive definite").unpack();
    let mu = log_mean(p);
    let g = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut w = g * l.transpose();
    for mut row in w.row_iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v + mu[j]).exp();
        }
    }
    w
}

/// True coefficients `[β₀, β₁, …, β_p]`.
pub fn beta_star(p: usize) -> DVector<f64> {
    let mut b = DVector::zeros(p + 1);
    b[0] = BETA0;
    for (k, &v) in BETA_HEAD.iter().enumerate().take(p) {
        b[k + 1] = v;
    }
    b
}

/// `[β₁, …, β_p, β₀]`, the order of the design `[Z 1]`.
pub fn beta_star_design(p: usize) -> DVector<f64> {
    let b = beta_star(p);
    let mut out = DVector::zeros(p + 1);
    out.rows_mut(0, p).copy_from(&b.rows(1, p));
    out[p] = b[0];
    out
}

/// Subcomposition constraint over the first 23 taxa of the design
/// `[Z 1]`; the intercept row is zero.
pub fn constraint_sim(p: usize) -> Result<ConstraintMatrix> {
    let groups: Vec<Vec<usize>> =
        GROUP_BOUNDS.windows(2).map(|w| (w[0]..w[1]).collect()).collect();
    ConstraintMatrix::from_groups(groups, p + 1)
}

/// `[log(W / rowsum) 1]`.
pub fn design_matrix(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let z = log_transform(&total_sum_normalize(w)?)?;
    let n = z.nrows();
    let mut x = DMatrix::from_element(n, z.ncols() + 1, 1.0);
    x.columns_mut(0, z.ncols()).copy_from(&z);
    Ok(x)
}

/// `y = Xβ + ε` with `σ = ‖Xβ‖ / (√n·snr)`.
pub fn gen_response<R: Rng>(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    snr: f64,
    rng: &mut R,
) -> (DVector<f64>, f64) {
    let signal = x * beta;
    let n = x.nrows();
    let sigma = signal.norm() / ((n as f64).sqrt() * snr);
    let eps = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * sigma);
    (signal + eps, sigma)
}

/// Add `shift` to the first `count` responses.
pub fn inject_outliers(y: &DVector<f64>, count: usize, shift: f64) -> (DVector<f64>, Vec<usize>) {
    let mut out = y.clone();
    for i in 0..count {
        out[i] += shift;
    }
    (out, (0..count).collect())
}

/// Swap the `count/2` largest responses with the `count/2` smallest.
pub fn swap_responses(y: &DVector<f64>, count: usize) -> (DVector<f64>, Vec<usize>) {
    let half = count / 2;
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let low = &order[..half];
    let high = &order[order.len() - half..];
    let mut out = y.clone();
    for (&i, &j) in low.iter().zip(high.iter().rev()) {
        out.swap_rows(i, j);
    }
    let mut set: Vec<usize> = low.iter().chain(high).copied().collect();
    set.sort_unstable();
    (out, set)
}

/// Replace the first `count/2` rows of `w` by leveraged rows: in every
/// group the first taxon is raised by a constant and sorted descending,
/// the other taxa sorted ascending.
pub fn make_leveraged(w: &DMatrix<f64>, count: usize, groups: &[Vec<usize>]) -> DMatrix<f64> {
    if count % 2 == 1 {
        warn!("odd outlier count {count}; leveraging {} rows", count / 2);
    }
    let rows = count / 2;
    let mut out = w.clone();
    if rows == 0 {
        return out;
    }
    for group in groups {
        for (pos, &j) in group.iter().enumerate() {
            let mut col: Vec<f64> = w.column(j).iter().copied().collect();
            if pos == 0 {
                col.iter_mut().for_each(|v| *v += LEVERAGE_BOOST);
                col.sort_by(|a, b| b.total_cmp(a));
            } else {
                col.sort_by(f64::total_cmp);
            }
            for i in 0..rows {
                out[(i, j)] = col[i];
            }
        }
    }
    out
}

/// One simulated data set.
#[derive(Debug, Clone)]
pub struct SimData {
    pub w: DMatrix<f64>,
    /// `[Z 1]`.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma: f64,
    pub outliers: Vec<usize>,
    pub beta: DVector<f64>,
    pub constraint: ConstraintMatrix,
}

pub fn simulate(config: &ScenarioConfig, replicate: usize) -> Result<SimData> {
    config.validate()?;
    let mut rng = replicate_rng(config.seed, replicate);
    let p = config.p;
    let constraint = constraint_sim(p)?;
    let beta = constraint.project(&beta_star_design(p));
    let w0 = gen_covariates(config.n, p, &mut rng);
    let x0 = design_matrix(&w0)?;
    let (y0, sigma) = gen_response(&x0, &beta, config.snr, &mut rng);
    let w = if config.leveraged {
        make_leveraged(&w0, config.outliers, &constraint.groups)
    } else {
        w0
    };
    let x = design_matrix(&w)?;
    let (y, outliers) = match config.corruption {
        Corruption::Shift => inject_outliers(&y0, config.outliers, config.shift * sigma),
        Corruption::Swap => swap_responses(&y0, config.outliers),
    };
    Ok(SimData { w, x, y, sigma, outliers, beta, constraint })
}

impl SimData {
    pub fn prepared(&self) -> Result<Prepared> {
        let p = self.x.ncols() - 1;
        let z = self.x.columns(0, p).into_owned();
        let ones = self.x.columns(p, 1).into_owned();
        let design = build_design(&z, &ones)?;
        Prepared::new(design, &self.constraint, self.y.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub fp1: f64,
    pub fp2: f64,
    pub hm: f64,
    pub er: f64,
}

/// Outlier-detection counts and `Er = 100‖β* − β̂‖₂ / p`.
pub fn evaluate(
    detected: &[usize],
    truth: &[usize],
    refit_outliers: &[usize],
    beta_refit: &DVector<f64>,
    beta_star: &DVector<f64>,
    p: usize,
) -> Metrics {
    let missed = truth.iter().filter(|i| !detected.contains(i)).count() as f64;
    let fp1 = detected.iter().filter(|i| !truth.contains(i)).count() as f64;
    let fp2 = refit_outliers.iter().filter(|i| !truth.contains(i)).count() as f64;
    let er = 100.0 * (beta_star - beta_refit).norm() / p as f64;
    Metrics { fn_: missed, fp1, fp2, hm: missed + fp1, er }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Robust(PenaltyKind),
    NonRobust,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Robust(PenaltyKind::AdaptiveElasticNet),
        Method::Robust(PenaltyKind::HardRidge),
        Method::Robust(PenaltyKind::ElasticNet),
        Method::NonRobust,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Robust(k) => k.label(),
            Method::NonRobust => "NR",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("nr") {
            Ok(Method::NonRobust)
        } else {
            Ok(Method::Robust(s.parse()?))
        }
    }
}

/// Scores of every method on one replicate, in the order requested.
pub fn run_replicate(
    config: &ScenarioConfig,
    replicate: usize,
    methods: &[Method],
    workflow: &WorkflowConfig,
) -> Result<Vec<Metrics>> {
    let data = simulate(config, replicate)?;
    let prep = data.prepared()?;
    let p = config.p;
    let wf = workflow.with_seed(config.seed.wrapping_add(replicate as u64));
    let needs_init = methods.iter().any(|m| matches!(m, Method::Robust(k) if k.needs_robust_init()));
    let init = if needs_init { Some(prep.robust_init(&wf.init)?) } else { None };
    let truth = &data.outliers;
    methods
        .iter()
        .map(|&m| match m {
            Method::Robust(kind) => {
                let cfg = WorkflowConfig { kind, ..wf };
                let a = run_workflow(&prep, &cfg, init.as_ref())?;
                Ok(evaluate(
                    &a.fit.outliers(),
                    truth,
                    &a.refit.outliers,
                    &a.refit_original,
                    &data.beta,
                    p,
                ))
            }
            Method::NonRobust => {
                let b = run_baseline(&prep, &wf.init.slcm)?;
                let beta = DVector::from_vec(b.beta_original);
                let er = 100.0 * (&data.beta - beta).norm() / p as f64;
                Ok(Metrics { er, ..Metrics::default() })
            }
        })
        .collect()
}

/// Per-method means over all replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub config: ScenarioConfig,
    pub methods: Vec<Method>,
    pub mean: Vec<Metrics>,
    pub per_replicate: Vec<Vec<Metrics>>,
}

pub fn run_scenario(
    config: &ScenarioConfig,
    methods: &[Method],
    workflow: &WorkflowConfig,
) -> Result<ScenarioSummary> {
    config.validate()?;
    let per_replicate: Vec<Vec<Metrics>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, r, methods, workflow))
        .collect::<Result<_>>()?;
    let r = config.replicates.max(1) as f64;
    let mean = (0..methods.len())
        .map(|k| {
            let mut acc = Metrics::default();
            for rep in &per_replicate {
                let m = rep[k];
                acc.fn_ += m.fn_;
                acc.fp1 += m.fp1;
                acc.fp2 += m.fp2;
                acc.hm += m.hm;
                acc.er += m.er;
            }
            Metrics { fn_: acc.fn_ / r, fp1: acc.fp1 / r, fp2: acc.fp2 / r, hm: acc.hm / r, er: acc.er / r }
        })
        .collect();
    Ok(ScenarioSummary { config: *config, methods: methods.to_vec(), mean, per_replicate })
}

impl ScenarioSummary {
    /// Column names: `L, p, O`, then `FN, FP1, FP2, Er` per robust method
    /// and `Er` for the non-robust one.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["L".to_string(), "p".to_string(), "O".to_string()];
        for m in &self.methods {
            let l = m.label();
            match m {
                Method::Robust(_) => {
                    for f in ["FN", "FP1", "FP2", "Er"] {
                        h.push(format!("{l}_{f}"));
                    }
                }
                Method::NonRobust => h.push(format!("{l}_Er")),
            }
        }
        h
    }

    pub fn row(&self) -> Vec<f64> {
        let c = &self.config;
        let mut r = vec![f64::from(u8::from(c.leveraged)), c.p as f64, c.outliers as f64];
        for (m, v) in self.methods.iter().zip(&self.mean) {
            match m {
                Method::Robust(_) => r.extend([v.fn_, v.fp1, v.fp2, v.er]),
                Method::NonRobust => r.push(v.er),
            }
        }
        r
    }

    pub fn mean_of(&self, method: Method) -> Option<Metrics> {
        self.methods.iter().position(|&m| m == method).map(|k| self.mean[k])
    }
}
