mod common;

use common::toy;
use rlc_core::init::m_scale;
use rlc_core::InitOptions;

#[test]
fn clean_data_scale_tracks_noise_level() {
    for seed in 0..5 {
        let t = toy(300, 10, 100 + seed, 0.5, 0, 0.0);
        let init = t.prep.robust_init(&InitOptions::default()).unwrap();
        let rel = (init.scale - t.sigma).abs() / t.sigma;
        assert!(rel <= 0.25, "seed {seed}: scale {} vs sigma {}", init.scale, t.sigma);
    }
}

#[test]
fn clean_set_excludes_planted_outliers() {
    let mut excluded = 0;
    let mut planted = 0;
    for seed in 0..5 {
        let t = toy(100, 10, 200 + seed, 0.5, 20, 8.0 * 0.5);
        let init = t.prep.robust_init(&InitOptions::default()).unwrap();
        planted += t.outliers.len();
        excluded += t.outliers.iter().filter(|i| !init.clean.contains(i)).count();
    }
    assert!(excluded as f64 >= 0.8 * planted as f64, "{excluded} of {planted}");
}

#[test]
fn clean_data_residuals_are_small() {
    let t = toy(150, 10, 300, 0.4, 0, 0.0);
    let init = t.prep.robust_init(&InitOptions::default()).unwrap();
    let small = init.gamma.iter().filter(|g| g.abs() < 3.0 * t.sigma).count();
    assert!(small as f64 >= 0.95 * 150.0, "{small} of 150");
}

#[test]
fn output_shapes_weights_and_scale_trace() {
    let t = toy(60, 8, 301, 0.3, 6, 2.4);
    let init = t.prep.robust_init(&InitOptions::default()).unwrap();
    assert_eq!(init.beta.len(), 9);
    assert_eq!(init.gamma.len(), 60);
    assert_eq!(init.weights.len(), 69);
    assert!(init.weights.iter().all(|&w| w > 0.0 && w <= 1e6));
    assert!(init.iterations <= InitOptions::default().max_iter);
    assert!(init.scale_trace.iter().all(|s| s.is_finite() && *s >= 0.0));
    assert!(t.prep.constraint.violation(&init.beta).amax() <= 1e-6);
    let resid: Vec<f64> = init.gamma.iter().copied().collect();
    assert!(init.scale <= m_scale(&resid) * 10.0 + 1e-12);
}

#[test]
fn initializer_is_deterministic() {
    let t = toy(60, 8, 302, 0.3, 6, 2.4);
    let a = t.prep.robust_init(&InitOptions::default()).unwrap();
    let b = t.prep.robust_init(&InitOptions::default()).unwrap();
    assert_eq!(a.beta, b.beta);
    assert_eq!(a.gamma, b.gamma);
    assert_eq!(a.clean, b.clean);
    assert_eq!(a.scale_trace, b.scale_trace);
}
