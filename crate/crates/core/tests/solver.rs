mod common;

use approx::assert_abs_diff_eq;
use common::{tight, toy};
use nalgebra::{DMatrix, DVector};
use rlc_core::composition::build_constraint;
use rlc_core::linalg::constrained_lstsq;
use rlc_core::penalty::kappa_scalars;
use rlc_core::solver::{
    ista_step, objective, refit_inliers, slcm_at, slcm_problem, DualDescent, Estimate,
};
use rlc_core::{InitOptions, PenaltyKind, SolverOptions};

#[test]
fn noiseless_data_is_recovered() {
    let t = toy(60, 8, 1, 0.0, 0, 0.0);
    let prob = t.prep.shift_problem(PenaltyKind::ElasticNet, 0.95, None).unwrap();
    let fit = DualDescent::new(&prob, tight()).fit(1e-5, &Estimate::zeros(9, 60), None).unwrap();
    assert!(fit.converged);
    assert_abs_diff_eq!((&fit.beta - &t.beta_fit).amax(), 0.0, epsilon = 1e-3);
    assert!(fit.gamma.amax() < 1e-6, "gamma {}", fit.gamma.amax());
}

#[test]
fn converged_fits_are_feasible() {
    for (seed, kind) in [
        (2, PenaltyKind::ElasticNet),
        (3, PenaltyKind::AdaptiveElasticNet),
        (4, PenaltyKind::HardRidge),
    ] {
        let t = toy(50, 10, seed, 0.3, 5, 4.0);
        let init = t.prep.robust_init(&InitOptions::default()).unwrap();
        let weights = (kind == PenaltyKind::AdaptiveElasticNet).then_some(init.weights.as_slice());
        let prob = t.prep.shift_problem(kind, 0.95, weights).unwrap();
        let solver = DualDescent::new(&prob, SolverOptions::default());
        for lam in [0.5, 0.1, 0.02] {
            let fit = solver.fit(lam, &init.estimate(), None).unwrap();
            if fit.converged {
                assert!(prob.constraint.violation(&fit.beta).amax() <= 1e-6);
            }
        }
    }
}

#[test]
fn convex_trace_is_monotone_and_final_iterate_is_fixed() {
    let t = toy(40, 6, 5, 0.3, 4, 3.0);
    let prob = t.prep.shift_problem(PenaltyKind::ElasticNet, 0.95, None).unwrap();
    let solver = DualDescent::new(&prob, SolverOptions::default());
    let fit = solver.fit(0.05, &Estimate::zeros(7, 40), None).unwrap();
    assert!(fit.converged);
    for w in fit.obj_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-8, "{} then {}", w[0], w[1]);
    }
    let it = solver.iterate_of(&fit);
    let ytil = solver.system().augmented_response(&prob.y, &(&fit.eta - prob.constraint.c.tr_mul(&fit.theta)));
    let next = ista_step(solver.system(), &ytil, solver.inner_penalty(0.05), solver.k0(), &it);
    assert!((next - it).amax() < 1e-6);
}

#[test]
fn default_run_matches_long_reference() {
    let t = toy(8, 4, 6, 0.2, 1, 2.0);
    let prob = t.prep.shift_problem(PenaltyKind::ElasticNet, 0.95, None).unwrap();
    let start = Estimate::zeros(5, 8);
    let lam = 0.05;
    let fit = DualDescent::new(&prob, SolverOptions::default()).fit(lam, &start, None).unwrap();
    let reference = SolverOptions {
        inner_tol: 1e-12,
        inner_max_iter: 1_000_000,
        outer_tol: 1e-12,
        outer_max_iter: 10_000,
        ..SolverOptions::default()
    };
    let long = DualDescent::new(&prob, reference).fit(lam, &start, None).unwrap();
    assert_abs_diff_eq!(fit.objective(), long.objective(), epsilon = 1e-6);
}

#[test]
fn column_permutation_permutes_coefficients() {
    let t = toy(40, 6, 7, 0.3, 3, 3.0);
    let prob = t.prep.shift_problem(PenaltyKind::ElasticNet, 0.95, None).unwrap();
    let fit = DualDescent::new(&prob, tight()).fit(0.05, &Estimate::zeros(7, 40), None).unwrap();
    let perm = [3, 0, 5, 1, 4, 2, 6];
    let x = prob.x.select_columns(&perm);
    let constraint = prob.constraint.permuted(&perm).unwrap();
    let penalty = prob.penalty.clone();
    let pprob = rlc_core::RegressionProblem::new(x, prob.y.clone(), constraint, penalty, true).unwrap();
    let pfit = DualDescent::new(&pprob, tight()).fit(0.05, &Estimate::zeros(7, 40), None).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert_abs_diff_eq!(pfit.beta[new], fit.beta[old], epsilon = 1e-10);
    }
}

#[test]
fn hard_ridge_improves_on_its_start() {
    for seed in 10..15 {
        let t = toy(40, 8, seed, 0.3, 4, 3.0);
        let init = t.prep.robust_init(&InitOptions::default()).unwrap();
        let prob = t.prep.shift_problem(PenaltyKind::HardRidge, 0.95, None).unwrap();
        let lam = 0.1;
        let fit = DualDescent::new(&prob, SolverOptions::default()).fit(lam, &init.estimate(), None).unwrap();
        let start = objective(&prob, &init.beta, &init.gamma, lam);
        assert!(fit.objective() <= start + 1e-10, "{} > {}", fit.objective(), start);
    }
}

#[test]
fn huge_lambda_gives_null_model() {
    let t = toy(30, 5, 8, 0.3, 0, 0.0);
    let prob = t.prep.shift_problem(PenaltyKind::ElasticNet, 0.95, None).unwrap();
    let fit = DualDescent::new(&prob, SolverOptions::default()).fit(1e6, &Estimate::zeros(6, 30), None).unwrap();
    assert!(fit.null_model);
    assert!(fit.gamma.iter().all(|&g| g == 0.0));
}

#[test]
fn constrained_lasso_at_zero_is_least_squares() {
    let t = toy(30, 5, 9, 0.3, 0, 0.0);
    let base = t.prep.base_problem().unwrap();
    let fit = slcm_at(&base, 0.0, &DVector::zeros(6), None, &tight()).unwrap();
    let ls = constrained_lstsq(&base.x, &base.y, &base.constraint.c);
    assert_abs_diff_eq!((&fit.beta - ls).amax(), 0.0, epsilon = 1e-6);
    assert!(base.constraint.violation(&fit.beta).amax() <= 1e-6);
}

/// Projected soft threshold: `β = soft(b − ν, λκ)` with ν solving `Σβ = 0`.
fn zero_sum_soft_threshold(b: &[f64], thr: f64) -> Vec<f64> {
    let soft = |v: f64| v.signum() * (v.abs() - thr).max(0.0);
    let sum = |nu: f64| b.iter().map(|&v| soft(v - nu)).sum::<f64>();
    let (mut lo, mut hi) = (-100.0, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    b.iter().map(|&v| soft(v - nu)).collect()
}

#[test]
fn orthogonal_constrained_lasso_matches_closed_form() {
    // Columns orthogonal with norm √n, so the loss is ½‖β − X'y/n‖² + const.
    let n = 6;
    #[rustfmt::skip]
    let h = DMatrix::from_row_slice(6, 3, &[
         1.0,  1.0,  1.0,
         1.0, -1.0,  1.0,
         1.0,  0.0, -2.0,
        -1.0,  1.0,  1.0,
        -1.0, -1.0,  1.0,
        -1.0,  0.0, -2.0,
    ]);
    let mut x = h.clone();
    for mut c in x.column_iter_mut() {
        let norm = c.norm();
        c *= (n as f64).sqrt() / norm;
    }
    let gram = x.transpose() * &x;
    assert_abs_diff_eq!((gram - DMatrix::identity(3, 3) * n as f64).amax(), 0.0, epsilon = 1e-12);
    let y = DVector::from_vec(vec![2.0, -1.0, 0.5, 1.5, -0.3, 0.8]);
    let c = build_constraint(&[3], 0).unwrap();
    let prob = slcm_problem(x.clone(), y.clone(), c.clone(), &[]).unwrap();
    let lam = 0.1;
    let fit = slcm_at(&prob, lam, &DVector::zeros(3), None, &tight()).unwrap();
    let b: Vec<f64> = (x.tr_mul(&y) / n as f64).iter().copied().collect();
    let (_, k2) = kappa_scalars(0, 3);
    let expect = zero_sum_soft_threshold(&b, lam * k2);
    for j in 0..3 {
        assert_abs_diff_eq!(fit.beta[j], expect[j], epsilon = 1e-6);
    }
    assert!(c.violation(&fit.beta).amax() <= 1e-6);
}

#[test]
fn refit_keeps_planted_outliers() {
    let t = toy(80, 8, 11, 0.3, 6, 8.0 * 0.3);
    let init = t.prep.robust_init(&InitOptions::default()).unwrap();
    let prob = t.prep.shift_problem(PenaltyKind::HardRidge, 0.95, None).unwrap();
    let fit = DualDescent::new(&prob, SolverOptions::default()).fit(0.1, &init.estimate(), None).unwrap();
    let refit = refit_inliers(&prob, &fit);
    for i in &t.outliers {
        assert!(refit.outliers.contains(i), "outlier {i} lost: {:?} {:?}", fit.outliers(), refit.outliers);
    }
}

#[test]
fn no_outliers_refits_on_everything() {
    let t = toy(30, 5, 12, 0.3, 0, 0.0);
    let prob = t.prep.shift_problem(PenaltyKind::ElasticNet, 0.95, None).unwrap();
    let fit = DualDescent::new(&prob, SolverOptions::default()).fit(1e3, &Estimate::zeros(6, 30), None).unwrap();
    let refit = refit_inliers(&prob, &fit);
    assert_eq!(refit.inliers.len() + refit.outliers.len(), 30);
    assert!(refit.outliers.len() <= 1);
}
