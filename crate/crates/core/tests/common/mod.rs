#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rlc_core::composition::{build_constraint, build_design, log_transform, total_sum_normalize};
use rlc_core::simulate::gen_covariates;
use rlc_core::{Prepared, SolverOptions};

/// Compositional design with an intercept, a single zero-sum constraint
/// over the taxa and a sparse feasible coefficient vector.
pub struct Toy {
    pub prep: Prepared,
    /// Fitting-scale truth.
    pub beta_fit: DVector<f64>,
    pub outliers: Vec<usize>,
    pub sigma: f64,
}

pub fn toy(n: usize, p: usize, seed: u64, sigma: f64, n_out: usize, shift: f64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = gen_covariates(n, p, &mut rng);
    let z = log_transform(&total_sum_normalize(&w).unwrap()).unwrap();
    let ones = DMatrix::from_element(n, 1, 1.0);
    let design = build_design(&z, &ones).unwrap();
    let constraint = build_constraint(&[p], 1).unwrap();
    let mut b = DVector::zeros(p + 1);
    b[0] = 1.0;
    b[1] = -0.6;
    b[2] = -0.4;
    b[p] = 0.3;
    let beta_fit = design.to_fit(&b);
    let mut y = &design.x * &beta_fit;
    for i in 0..n {
        let e: f64 = StandardNormal.sample(&mut rng);
        y[i] += sigma * e;
    }
    for yi in y.iter_mut().take(n_out) {
        *yi += shift;
    }
    let prep = Prepared::new(design, &constraint, y).unwrap();
    let beta_fit = prep.design.to_fit(&b);
    Toy { prep, beta_fit, outliers: (0..n_out).collect(), sigma }
}

pub fn tight() -> SolverOptions {
    SolverOptions {
        inner_tol: 1e-13,
        inner_max_iter: 200_000,
        outer_tol: 1e-12,
        outer_max_iter: 2_000,
        ..SolverOptions::default()
    }
}
