//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use nalgebra::DVector;
use rlc_core::composition::Design;
use rlc_core::selection::{residual_statistic, train_scale, GridOptions, LambdaPath, StatisticOptions};
use rlc_core::simulate::{run_scenario, simulate, Corruption, Method};
use rlc_core::solver::{constrained_refit, slcm_at, slcm_fit, SlcmOptions};
use rlc_core::{
    run_workflow, CvOptions, CvResult, InitOptions, PenaltyKind, Prepared, ScenarioConfig,
    SelectionRule, SolverOptions, WorkflowConfig,
};
use serde::{Deserialize, Serialize};

use crate::args::{
    Command, CorruptionArg, DataArgs, FitArgs, InitArgs, InitParams, PenaltyArg, PredictArgs,
    RuleArg, SimulateArgs, SolverParams,
};
use crate::data::{constraint_for, load_samples, read_groups, training_layout, Layout, Samples, Table};
use crate::error::input_error;
use crate::output::{digests, fmt_num, write_csv, write_json, Manifest, MANIFEST};

pub const COEFFICIENTS: &str = "coefficients.json";
pub const GAMMA: &str = "gamma.csv";
pub const FITTED: &str = "fitted.csv";
pub const CV_JSON: &str = "cv.json";
pub const CV_CSV: &str = "cv.csv";
pub const INIT_JSON: &str = "init.json";
pub const PREDICTIONS: &str = "predictions.csv";
pub const PREDICT_JSON: &str = "predict.json";
pub const TABLE: &str = "table.csv";
pub const REPLICATES: &str = "replicates.csv";
pub const DATASETS: &str = "datasets.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    NotConverged,
}

/// What a command read and wrote.
#[derive(Debug, Default)]
struct Report {
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    converged: Option<bool>,
}

pub fn execute(cmd: &Command) -> Result<Outcome> {
    let common = cmd.common();
    let (seed, source) = match common.seed {
        Some(s) => (s, "flag"),
        None => (rand::random::<u64>(), "entropy"),
    };
    let threads = match common.threads {
        Some(0) => return Err(input_error("--threads must be at least 1")),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create output directory {}", common.out.display()))?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let clock = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let out = common.out.as_path();
    let report = pool.install(|| match cmd {
        Command::Fit(a) => cmd_fit(a, seed, out),
        Command::Cv(a) => cmd_cv(a, seed, out),
        Command::Init(a) => cmd_init(a, seed, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Simulate(a) => cmd_simulate(a, seed, out),
    })?;
    let inputs: Vec<&Path> = report.inputs.iter().map(PathBuf::as_path).collect();
    let manifest = Manifest {
        command: cmd.name().to_string(),
        parameters: serde_json::to_value(cmd)?,
        seed,
        seed_source: source.to_string(),
        threads,
        inputs: digests(&inputs)?,
        outputs: report.outputs,
        converged: report.converged,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix_seconds: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(if report.converged == Some(false) { Outcome::NotConverged } else { Outcome::Done })
}

struct Loaded {
    layout: Layout,
    samples: Samples,
    prep: Prepared,
    inputs: Vec<PathBuf>,
}

fn load_training(args: &DataArgs) -> Result<Loaded> {
    let table = Table::read(&args.data)?;
    let layout = training_layout(&table, args)?;
    let samples = load_samples(&table, &layout, true)?;
    let mut inputs = vec![args.data.clone()];
    let groups = match &args.constraint {
        Some(p) => {
            inputs.push(p.clone());
            Some(read_groups(p, &layout)?)
        }
        None => None,
    };
    let constraint = constraint_for(&layout, groups)?;
    let design = samples.dataset.design()?;
    let y = samples.y.clone().expect("response is loaded for training");
    let prep = Prepared::new(design, &constraint, y)?;
    Ok(Loaded { layout, samples, prep, inputs })
}

pub fn solver_options(s: &SolverParams) -> SolverOptions {
    SolverOptions {
        inner_tol: s.inner_tol,
        inner_max_iter: s.inner_max_iter,
        outer_tol: s.outer_tol,
        outer_max_iter: s.outer_max_iter,
        ..SolverOptions::default()
    }
}

pub fn init_options(p: &InitParams, solver: SolverOptions, seed: u64) -> InitOptions {
    InitOptions {
        tau: p.tau,
        alpha1: p.alpha1,
        c1: p.c1,
        nu: p.nu,
        max_iter: p.init_max_iter,
        slcm: SlcmOptions { seed, solver, ..SlcmOptions::default() },
        ..InitOptions::default()
    }
}

fn penalty_kind(p: PenaltyArg) -> Option<PenaltyKind> {
    match p {
        PenaltyArg::A => Some(PenaltyKind::AdaptiveElasticNet),
        PenaltyArg::H => Some(PenaltyKind::HardRidge),
        PenaltyArg::E => Some(PenaltyKind::ElasticNet),
        PenaltyArg::NR => None,
    }
}

fn workflow_config(a: &FitArgs, kind: PenaltyKind, seed: u64) -> Result<WorkflowConfig> {
    if a.folds < 2 {
        return Err(input_error("--folds must be at least 2"));
    }
    if a.n_lambda < 2 {
        return Err(input_error("--n-lambda must be at least 2"));
    }
    if let Some(l) = a.lambda {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(input_error("--lambda must be a finite nonnegative number"));
        }
    }
    let solver = solver_options(&a.solver);
    let config = WorkflowConfig {
        kind,
        alpha: a.alpha,
        grid: GridOptions { n_points: a.n_lambda, ..GridOptions::default() },
        cv: CvOptions { k: a.folds, seed, solver, ..CvOptions::default() },
        rule: match a.rule {
            RuleArg::Min => SelectionRule::Min,
            RuleArg::OneSe => SelectionRule::OneSe,
        },
        init: init_options(&a.init, solver, seed),
        solver,
        lambda: a.lambda,
    };
    Ok(config.with_seed(seed))
}

/// Fitted model as written to `coefficients.json` and read by `predict`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub penalty: String,
    pub alpha: f64,
    pub lambda: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub objective: Option<f64>,
    pub seed: u64,
    pub layout: Layout,
    pub names: Vec<String>,
    /// Coefficients on the raw column scale.
    pub beta: Vec<f64>,
    /// Two-stage refit on the raw column scale.
    pub refit: Vec<f64>,
    /// Coefficients on the normalized design scale.
    pub beta_fit: Vec<f64>,
    pub design: Design,
    /// Root mean square of the training residuals after the mean shift.
    pub train_scale: f64,
    pub outliers: Vec<String>,
    pub refit_outliers: Vec<String>,
}

#[derive(Debug, Serialize)]
struct CvFile<'a> {
    rule: &'a str,
    selected_lambda: f64,
    nnz_gamma: &'a [usize],
    outliers: Vec<String>,
    #[serde(flatten)]
    cv: &'a CvResult,
}

fn ids_of(ids: &[String], idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| ids[i].clone()).collect()
}

fn write_cv(out: &Path, cv: &CvResult, path: &LambdaPath, rule: RuleArg, selected: f64, outliers: Vec<String>) -> Result<Vec<String>> {
    let rule = match rule {
        RuleArg::Min => "min",
        RuleArg::OneSe => "1se",
    };
    let file = CvFile { rule, selected_lambda: selected, nnz_gamma: &path.nnz_gamma, outliers, cv };
    write_json(&out.join(CV_JSON), &file)?;
    let rows: Vec<Vec<String>> = (0..cv.lambdas.len())
        .map(|l| vec![fmt_num(cv.lambdas[l]), fmt_num(cv.mean[l]), fmt_num(cv.se[l])])
        .collect();
    write_csv(&out.join(CV_CSV), &["lambda", "mean", "se"], &rows)?;
    Ok(vec![CV_JSON.into(), CV_CSV.into()])
}

fn write_fit_tables(out: &Path, ids: &[String], gamma: &DVector<f64>, fitted: &DVector<f64>, y: &DVector<f64>) -> Result<Vec<String>> {
    let rows: Vec<Vec<String>> = (0..ids.len())
        .map(|i| {
            let g = if gamma.is_empty() { 0.0 } else { gamma[i] };
            vec![ids[i].clone(), fmt_num(g), u8::from(g != 0.0).to_string()]
        })
        .collect();
    write_csv(&out.join(GAMMA), &["id", "gamma", "outlier"], &rows)?;
    let rows: Vec<Vec<String>> = (0..ids.len())
        .map(|i| vec![ids[i].clone(), fmt_num(fitted[i]), fmt_num(y[i] - fitted[i])])
        .collect();
    write_csv(&out.join(FITTED), &["id", "fitted", "residual"], &rows)?;
    Ok(vec![GAMMA.into(), FITTED.into()])
}

fn cmd_fit(a: &FitArgs, seed: u64, out: &Path) -> Result<Report> {
    let loaded = load_training(&a.data)?;
    let mut report = Report { inputs: loaded.inputs.clone(), ..Report::default() };
    let (model, gamma) = match penalty_kind(a.penalty) {
        Some(kind) => fit_robust(a, kind, seed, &loaded, out, &mut report)?,
        None => fit_nonrobust(a, seed, &loaded)?,
    };
    let prep = &loaded.prep;
    let fitted = &prep.design.x * DVector::from_vec(model.beta_fit.clone());
    write_json(&out.join(COEFFICIENTS), &model)?;
    report.outputs.push(COEFFICIENTS.into());
    report.outputs.extend(write_fit_tables(out, &loaded.samples.ids, &gamma, &fitted, &prep.y)?);
    report.converged = Some(model.converged);
    Ok(report)
}

fn fit_robust(
    a: &FitArgs,
    kind: PenaltyKind,
    seed: u64,
    loaded: &Loaded,
    out: &Path,
    report: &mut Report,
) -> Result<(ModelFile, DVector<f64>)> {
    let config = workflow_config(a, kind, seed)?;
    let prep = &loaded.prep;
    let ids = &loaded.samples.ids;
    let analysis = run_workflow(prep, &config, None)?;
    let fit = &analysis.fit;
    let outliers = ids_of(ids, &fit.outliers());
    if let (Some(cv), Some(path)) = (&analysis.cv, &analysis.path) {
        report.outputs.extend(write_cv(out, cv, path, a.rule, fit.lambda, outliers.clone())?);
    }
    let model = ModelFile {
        penalty: kind.label().to_string(),
        alpha: a.alpha,
        lambda: fit.lambda,
        converged: fit.converged,
        outer_iterations: fit.outer_iters,
        objective: Some(fit.objective()).filter(|v| v.is_finite()),
        seed,
        layout: loaded.layout.clone(),
        names: loaded.layout.coef_names(),
        beta: analysis.beta_original.iter().copied().collect(),
        refit: analysis.refit_original.iter().copied().collect(),
        beta_fit: fit.beta.iter().copied().collect(),
        design: prep.design.clone(),
        train_scale: train_scale(&fit.beta, &fit.gamma, &prep.design.x, &prep.y),
        outliers,
        refit_outliers: ids_of(ids, &analysis.refit.outliers),
    };
    Ok((model, fit.gamma.clone()))
}

fn fit_nonrobust(a: &FitArgs, seed: u64, loaded: &Loaded) -> Result<(ModelFile, DVector<f64>)> {
    let config = workflow_config(a, PenaltyKind::ElasticNet, seed)?;
    let prep = &loaded.prep;
    let base = prep.base_problem()?;
    let q = base.n_coef();
    let (beta, lambda, converged, outer, objective) = match a.lambda {
        Some(lam) => {
            let f = slcm_at(&base, lam, &DVector::zeros(q), None, &config.solver)?;
            let obj = f.objective();
            (f.beta, lam, f.converged, f.outer_iters, Some(obj).filter(|v| v.is_finite()))
        }
        None => {
            let opts = SlcmOptions { folds: a.folds, seed, solver: config.solver, ..SlcmOptions::default() };
            let f = slcm_fit(&base, None, &opts)?;
            (f.beta, f.lambda, true, 0, None)
        }
    };
    let mut support: Vec<usize> = (0..q).filter(|&j| beta[j] != 0.0).collect();
    for j in base.unpenalized_coef() {
        if !support.contains(&j) {
            support.push(j);
        }
    }
    support.sort_unstable();
    let rows: Vec<usize> = (0..base.n_samples()).collect();
    let refit = constrained_refit(&base.x, &base.y, &base.constraint.c, &rows, &support);
    let model = ModelFile {
        penalty: "NR".to_string(),
        alpha: 1.0,
        lambda,
        converged,
        outer_iterations: outer,
        objective,
        seed,
        layout: loaded.layout.clone(),
        names: loaded.layout.coef_names(),
        beta: prep.design.to_original(&beta).iter().copied().collect(),
        refit: prep.design.to_original(&refit).iter().copied().collect(),
        beta_fit: beta.iter().copied().collect(),
        design: prep.design.clone(),
        train_scale: train_scale(&beta, &DVector::zeros(0), &prep.design.x, &prep.y),
        outliers: Vec::new(),
        refit_outliers: Vec::new(),
    };
    Ok((model, DVector::zeros(0)))
}

fn cmd_cv(a: &FitArgs, seed: u64, out: &Path) -> Result<Report> {
    let Some(kind) = penalty_kind(a.penalty) else {
        return Err(input_error("cv needs a mean-shift penalty: A, H or E"));
    };
    if a.lambda.is_some() {
        return Err(input_error("cv does not take --lambda"));
    }
    let loaded = load_training(&a.data)?;
    let config = workflow_config(a, kind, seed)?;
    let analysis = run_workflow(&loaded.prep, &config, None)?;
    let (Some(cv), Some(path)) = (&analysis.cv, &analysis.path) else {
        unreachable!("cross-validation runs when no lambda is given");
    };
    let outliers = ids_of(&loaded.samples.ids, &analysis.fit.outliers());
    let outputs = write_cv(out, cv, path, a.rule, analysis.fit.lambda, outliers)?;
    Ok(Report { inputs: loaded.inputs, outputs, converged: Some(analysis.fit.converged) })
}

#[derive(Debug, Serialize)]
struct InitFile {
    names: Vec<String>,
    ids: Vec<String>,
    /// Coefficients on the raw column scale.
    beta: Vec<f64>,
    beta_fit: Vec<f64>,
    /// Full-sample residuals, one per sample.
    gamma: Vec<f64>,
    /// Adaptive weights over `[γ/√n; β]`.
    weights: Vec<f64>,
    scale: f64,
    clean: Vec<String>,
    scale_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn cmd_init(a: &InitArgs, seed: u64, out: &Path) -> Result<Report> {
    let loaded = load_training(&a.data)?;
    let opts = init_options(&a.init, solver_options(&a.solver), seed);
    let init = loaded.prep.robust_init(&opts)?;
    let file = InitFile {
        names: loaded.layout.coef_names(),
        ids: loaded.samples.ids.clone(),
        beta: loaded.prep.design.to_original(&init.beta).iter().copied().collect(),
        beta_fit: init.beta.iter().copied().collect(),
        gamma: init.gamma.iter().copied().collect(),
        weights: init.weights.clone(),
        scale: init.scale,
        clean: ids_of(&loaded.samples.ids, &init.clean),
        scale_trace: init.scale_trace.clone(),
        iterations: init.iterations,
        converged: init.converged,
    };
    write_json(&out.join(INIT_JSON), &file)?;
    Ok(Report { inputs: loaded.inputs, outputs: vec![INIT_JSON.into()], converged: Some(init.converged) })
}

#[derive(Debug, Serialize)]
struct PredictFile {
    n: usize,
    /// Robust out-of-sample statistic, present when the response is given.
    statistic: Option<f64>,
    train_scale: f64,
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input_error(format!("{}: invalid model file: {e}", path.display())))
}

fn cmd_predict(a: &PredictArgs, out: &Path) -> Result<Report> {
    let model = read_model(&a.model)?;
    let table = Table::read(&a.data)?;
    let samples = load_samples(&table, &model.layout, false)?;
    let ds = &samples.dataset;
    let x = model
        .design
        .transform(&ds.z, &ds.covariates)
        .map_err(|e| input_error(format!("{}: {e}", a.data.display())))?;
    let pred = x * DVector::from_vec(model.beta_fit.clone());
    let mut header = vec!["id", "prediction"];
    let rows: Vec<Vec<String>> = match &samples.y {
        Some(y) => {
            header.extend(["response", "residual"]);
            (0..pred.len())
                .map(|i| vec![samples.ids[i].clone(), fmt_num(pred[i]), fmt_num(y[i]), fmt_num(y[i] - pred[i])])
                .collect()
        }
        None => (0..pred.len()).map(|i| vec![samples.ids[i].clone(), fmt_num(pred[i])]).collect(),
    };
    write_csv(&out.join(PREDICTIONS), &header, &rows)?;
    let statistic = samples.y.as_ref().map(|y| {
        let r: Vec<f64> = (y - &pred).iter().copied().collect();
        residual_statistic(&r, model.train_scale, &StatisticOptions::default())
    });
    let file = PredictFile { n: pred.len(), statistic: statistic.filter(|s| s.is_finite()), train_scale: model.train_scale };
    write_json(&out.join(PREDICT_JSON), &file)?;
    Ok(Report {
        inputs: vec![a.model.clone(), a.data.clone()],
        outputs: vec![PREDICTIONS.into(), PREDICT_JSON.into()],
        converged: None,
    })
}

fn scenarios(a: &SimulateArgs, seed: u64) -> Result<Vec<ScenarioConfig>> {
    let corruption = match a.corruption {
        CorruptionArg::Shift => Corruption::Shift,
        CorruptionArg::Swap => Corruption::Swap,
    };
    let mut out = Vec::new();
    for &l in &a.leveraged {
        if l > 1 {
            return Err(input_error(format!("--leveraged takes 0 or 1, got {l}")));
        }
        for &p in &a.p {
            for &o in &a.outliers {
                let cfg = ScenarioConfig {
                    n: a.n,
                    p,
                    outliers: o,
                    shift: a.shift,
                    leveraged: l == 1,
                    snr: a.snr,
                    replicates: a.replicates,
                    seed,
                    corruption,
                };
                cfg.validate()?;
                out.push(cfg);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct DatasetEntry {
    file: String,
    leveraged: bool,
    p: usize,
    outliers: usize,
    replicate: usize,
    sigma: f64,
    true_outliers: Vec<String>,
    beta: Vec<f64>,
}

fn write_datasets(configs: &[ScenarioConfig], out: &Path) -> Result<Vec<String>> {
    let mut entries = Vec::new();
    let mut outputs = Vec::new();
    let mut groups_written = std::collections::BTreeSet::new();
    for cfg in configs {
        for r in 0..cfg.replicates {
            let data = simulate(cfg, r)?;
            let p = cfg.p;
            let name = format!("data_L{}_p{}_O{}_r{}.csv", u8::from(cfg.leveraged), p, cfg.outliers, r);
            let mut header = vec!["id".to_string(), "y".to_string()];
            header.extend((1..=p).map(|j| format!("x{j}")));
            let rows: Vec<Vec<String>> = (0..cfg.n)
                .map(|i| {
                    let mut row = vec![format!("s{}", i + 1), fmt_num(data.y[i])];
                    row.extend((0..p).map(|j| fmt_num(data.w[(i, j)])));
                    row
                })
                .collect();
            write_csv(&out.join(&name), &header, &rows)?;
            outputs.push(name.clone());
            if groups_written.insert(p) {
                let gname = format!("groups_p{p}.txt");
                let text: String = data
                    .constraint
                    .groups
                    .iter()
                    .map(|g| g.iter().map(|&j| format!("x{}", j + 1)).collect::<Vec<_>>().join(",") + "\n")
                    .collect();
                std::fs::write(out.join(&gname), text)?;
                outputs.push(gname);
            }
            entries.push(DatasetEntry {
                file: name,
                leveraged: cfg.leveraged,
                p,
                outliers: cfg.outliers,
                replicate: r,
                sigma: data.sigma,
                true_outliers: data.outliers.iter().map(|i| format!("s{}", i + 1)).collect(),
                beta: data.beta.iter().copied().collect(),
            });
        }
    }
    write_json(&out.join(DATASETS), &entries)?;
    outputs.push(DATASETS.into());
    Ok(outputs)
}

fn cmd_simulate(a: &SimulateArgs, seed: u64, out: &Path) -> Result<Report> {
    let configs = scenarios(a, seed)?;
    if a.data_only {
        let outputs = write_datasets(&configs, out)?;
        return Ok(Report { outputs, ..Report::default() });
    }
    let methods: Vec<Method> = a.methods.iter().map(|m| m.parse()).collect::<rlc_core::Result<_>>()?;
    if methods.is_empty() {
        return Err(input_error("--methods is empty"));
    }
    let solver = solver_options(&a.solver);
    let wf = WorkflowConfig {
        solver,
        cv: CvOptions { solver, ..CvOptions::default() },
        init: InitOptions { slcm: SlcmOptions { solver, ..SlcmOptions::default() }, ..InitOptions::default() },
        ..WorkflowConfig::default()
    };
    let mut header: Vec<String> = Vec::new();
    let mut rows = Vec::new();
    let mut reps = Vec::new();
    for cfg in &configs {
        let summary = run_scenario(cfg, &methods, &wf)?;
        if header.is_empty() {
            header = summary.header();
        }
        rows.push(summary.row().into_iter().map(fmt_num).collect());
        for (r, scores) in summary.per_replicate.iter().enumerate() {
            for (m, s) in methods.iter().zip(scores) {
                reps.push(vec![
                    u8::from(cfg.leveraged).to_string(),
                    cfg.p.to_string(),
                    cfg.outliers.to_string(),
                    r.to_string(),
                    m.label().to_string(),
                    fmt_num(s.fn_),
                    fmt_num(s.fp1),
                    fmt_num(s.fp2),
                    fmt_num(s.hm),
                    fmt_num(s.er),
                ]);
            }
        }
    }
    write_csv(&out.join(TABLE), &header, &rows)?;
    write_csv(
        &out.join(REPLICATES),
        &["L", "p", "O", "replicate", "method", "FN", "FP1", "FP2", "HM", "Er"],
        &reps,
    )?;
    Ok(Report { outputs: vec![TABLE.into(), REPLICATES.into()], ..Report::default() })
}
