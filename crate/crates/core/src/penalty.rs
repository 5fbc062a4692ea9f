//! The three sparsity penalties on `δ = [γ; β]` and their scalar proximity
//! operators.
//!
//! Per coordinate, with `d = 1 + λ(1 − α)`:
//!
//! | kind | penalty | proximity operator |
//! |------|---------|--------------------|
//! | hard-ridge | `α²λ²κ²·1{θ≠0}/2 + (1−α)λθ²/2` | `hard(t/d, αλκ/√d)` |
//! | elastic net | `αλκ|θ| + (1−α)λθ²/2` | `soft(t, αλκ)/d` |
//! | adaptive elastic net | `αλκw|θ| + (1−α)λθ²/2` | `soft(t, αλκw)/d` |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cap applied to adaptive weights of (near-)zero initial coefficients.
pub const MAX_ADAPTIVE_WEIGHT: f64 = 1e6;

/// Default mixing weight between the sparsity term and the ridge term.
pub const DEFAULT_ALPHA: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenaltyKind {
    #[serde(rename = "H")]
    HardRidge,
    #[serde(rename = "E")]
    ElasticNet,
    #[serde(rename = "A")]
    AdaptiveElasticNet,
}

impl PenaltyKind {
    pub fn is_convex(self) -> bool {
        !matches!(self, PenaltyKind::HardRidge)
    }

    /// Single-letter label used in tables and on the command line.
    pub fn label(self) -> &'static str {
        match self {
            PenaltyKind::HardRidge => "H",
            PenaltyKind::ElasticNet => "E",
            PenaltyKind::AdaptiveElasticNet => "A",
        }
    }

    /// Whether fits with this penalty start from the robust initializer.
    pub fn needs_robust_init(self) -> bool {
        !matches!(self, PenaltyKind::ElasticNet)
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "H" | "HARD-RIDGE" | "HARDRIDGE" => Ok(PenaltyKind::HardRidge),
            "E" | "ELASTIC-NET" | "ELASTICNET" => Ok(PenaltyKind::ElasticNet),
            "A" | "ADAPTIVE" | "ADAPTIVE-ELASTIC-NET" => Ok(PenaltyKind::AdaptiveElasticNet),
            other => Err(Error::InvalidParameter(format!("unknown penalty kind {other:?}"))),
        }
    }
}

/// `(√log(e·n), √log(e·p))`.
pub fn kappa_scalars(n: usize, p_eff: usize) -> (f64, f64) {
    let k = |m: usize| (1.0 + (m.max(1) as f64).ln()).sqrt();
    (k(n), k(p_eff))
}

pub fn soft_threshold(a: f64, lam: f64) -> f64 {
    a.signum() * (a.abs() - lam).max(0.0)
}

pub fn hard_threshold(a: f64, lam: f64) -> f64 {
    if a.abs() > lam {
        a
    } else {
        0.0
    }
}

/// Penalty configuration over the stacked parameter `δ = [γ; β]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub alpha: f64,
    pub kappa: Vec<f64>,
    pub weights: Vec<f64>,
    /// Coordinates with `false` are left unpenalized (the intercept).
    pub penalized: Vec<bool>,
}

impl PenaltySpec {
    /// κ = `[k₁·1_n_shift, k₂·1_n_coef]`, unit weights, every coordinate
    /// penalized except the listed coefficient indices.
    pub fn new(
        kind: PenaltyKind,
        alpha: f64,
        n_shift: usize,
        n_coef: usize,
        unpenalized_coef: &[usize],
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let (k1, k2) = kappa_scalars(n_shift, n_coef);
        let mut kappa = vec![k1; n_shift];
        kappa.extend(std::iter::repeat_n(k2, n_coef));
        let mut penalized = vec![true; n_shift + n_coef];
        for &j in unpenalized_coef {
            penalized[n_shift + j] = false;
        }
        Ok(Self { kind, alpha, kappa, weights: vec![1.0; n_shift + n_coef], penalized })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.kappa.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} coordinates",
                weights.len(),
                self.kappa.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    /// Restrict to a subset of `δ` coordinates, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            kind: self.kind,
            alpha: self.alpha,
            kappa: idx.iter().map(|&i| self.kappa[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            penalized: idx.iter().map(|&i| self.penalized[i]).collect(),
        }
    }

    /// Weight multiplying the ℓ1 term; only the adaptive kind uses `w`.
    fn l1_weight(&self, idx: usize) -> f64 {
        match self.kind {
            PenaltyKind::AdaptiveElasticNet => self.weights[idx],
            _ => 1.0,
        }
    }

    /// `argmin_θ ½(t − θ)² + P_λ(θ)` at coordinate `idx`.
    pub fn prox(&self, t: f64, lam: f64, idx: usize) -> f64 {
        self.prox_scaled(t, lam, idx, 1.0)
    }

    /// `argmin_θ ½(t − θ)² + step·P_λ(θ)`; `step = 1` is [`PenaltySpec::prox`].
    pub fn prox_scaled(&self, t: f64, lam: f64, idx: usize, step: f64) -> f64 {
        if !self.penalized[idx] || lam == 0.0 {
            return t;
        }
        let a = self.alpha;
        let kappa = self.kappa[idx];
        let d = 1.0 + step * lam * (1.0 - a);
        match self.kind {
            PenaltyKind::HardRidge => {
                let c = a * lam * kappa * step.sqrt() / d.sqrt();
                let u = t / d;
                // Ties at the jump keep the nonzero branch.
                if u.abs() >= c {
                    u
                } else {
                    0.0
                }
            }
            PenaltyKind::ElasticNet | PenaltyKind::AdaptiveElasticNet => {
                soft_threshold(t, step * a * lam * kappa * self.l1_weight(idx)) / d
            }
        }
    }

    /// Penalty contribution of a single coordinate.
    pub fn coordinate_value(&self, theta: f64, lam: f64, idx: usize) -> f64 {
        if !self.penalized[idx] {
            return 0.0;
        }
        let a = self.alpha;
        let kappa = self.kappa[idx];
        let ridge = (1.0 - a) * lam * theta * theta / 2.0;
        match self.kind {
            PenaltyKind::HardRidge => {
                let l0 = if theta != 0.0 { (a * lam * kappa).powi(2) / 2.0 } else { 0.0 };
                l0 + ridge
            }
            PenaltyKind::ElasticNet | PenaltyKind::AdaptiveElasticNet => {
                a * lam * kappa * self.l1_weight(idx) * theta.abs() + ridge
            }
        }
    }

    /// `P_λ(δ)`.
    pub fn value(&self, delta: &[f64], lam: f64) -> f64 {
        assert_eq!(delta.len(), self.len(), "delta length must match the penalty");
        delta.iter().enumerate().map(|(i, &d)| self.coordinate_value(d, lam, i)).sum()
    }
}

/// `P_λ(δ)` for a vector input.
pub fn penalty_value(spec: &PenaltySpec, delta: &[f64], lam: f64) -> f64 {
    spec.value(delta, lam)
}

/// Adaptive weights `|δ̈|^{-ν}` with non-finite or huge entries capped.
pub fn adaptive_weights(delta: &[f64], nu: f64) -> Vec<f64> {
    delta
        .iter()
        .map(|d| {
            let w = d.abs().powf(-nu);
            if w.is_finite() {
                w.min(MAX_ADAPTIVE_WEIGHT)
            } else {
                MAX_ADAPTIVE_WEIGHT
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar(kind: PenaltyKind, alpha: f64, kappa: f64, w: f64) -> PenaltySpec {
        PenaltySpec {
            kind,
            alpha,
            kappa: vec![kappa],
            weights: vec![w],
            penalized: vec![true],
        }
    }

    /// Dense-grid minimizer of `½(t − θ)² + P(θ)` over the sign-consistent
    /// segment between 0 and `t`.
    fn grid_min(spec: &PenaltySpec, t: f64, lam: f64, step: f64) -> (f64, f64) {
        let obj = |th: f64| 0.5 * (t - th).powi(2) + spec.coordinate_value(th, lam, 0);
        let steps = (t.abs() / step).ceil() as usize;
        let mut best = (0.0, obj(0.0));
        for i in 1..=steps {
            let th = t.signum() * (i as f64 * step).min(t.abs());
            let v = obj(th);
            if v < best.1 {
                best = (th, v);
            }
        }
        best
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa_scalars(1, 1), (1.0, 1.0));
        let (k1, k2) = kappa_scalars(200, 100);
        // √(1 + ln 200), √(1 + ln 100) from an independent evaluator.
        assert_abs_diff_eq!(k1, 2.509_644_9, epsilon = 1e-6);
        assert_abs_diff_eq!(k2, 2.367_524_1, epsilon = 1e-6);
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-0.7, 0.0), -0.7);
        assert_eq!(hard_threshold(0.9, 1.0), 0.0);
        assert_eq!(hard_threshold(1.5, 1.0), 1.5);
        assert_eq!(hard_threshold(-2.0, 1.0), -2.0);
    }

    #[test]
    fn prox_collapses_at_alpha_one() {
        let e = scalar(PenaltyKind::ElasticNet, 1.0, 1.0, 5.0);
        assert_eq!(e.prox(3.0, 1.0, 0), 2.0);
        let h = scalar(PenaltyKind::HardRidge, 1.0, 1.0, 1.0);
        assert_eq!(h.prox(0.9, 1.0, 0), 0.0);
        assert_eq!(h.prox(1.5, 1.0, 0), 1.5);
        // Jump point keeps the nonzero branch.
        assert_eq!(h.prox(1.0, 1.0, 0), 1.0);
    }

    #[test]
    fn hard_ridge_prox_matches_grid() {
        let h = scalar(PenaltyKind::HardRidge, 0.95, 1.0, 1.0);
        let got = h.prox(4.0, 2.0, 0);
        let (arg, _) = grid_min(&h, 4.0, 2.0, 1e-5);
        assert!((got - arg).abs() < 1e-4, "prox {got} grid {arg}");
        // d = 1.1, u = 3.636..., c = 1.9/√1.1 = 1.811...
        assert_abs_diff_eq!(got, 4.0 / 1.1, epsilon = 1e-12);
    }

    #[test]
    fn penalty_value_examples() {
        let e = PenaltySpec {
            kind: PenaltyKind::ElasticNet,
            alpha: 1.0,
            kappa: vec![1.0, 1.0],
            weights: vec![1.0, 1.0],
            penalized: vec![true, true],
        };
        assert_eq!(e.value(&[0.0, 0.0], 1.0), 0.0);
        assert_eq!(e.value(&[2.0, -3.0], 1.0), 5.0);
        let a = PenaltySpec { kind: PenaltyKind::AdaptiveElasticNet, weights: vec![2.0, 1.0], ..e };
        assert_eq!(a.value(&[2.0, -3.0], 1.0), 7.0);
    }

    #[test]
    fn unpenalized_coordinate_is_identity() {
        let spec = PenaltySpec::new(PenaltyKind::ElasticNet, 0.95, 3, 2, &[1]).unwrap();
        assert_eq!(spec.kappa.len(), 5);
        assert_eq!(spec.prox(0.3, 10.0, 4), 0.3);
        assert_eq!(spec.prox(0.3, 10.0, 3), 0.0);
        assert_eq!(spec.coordinate_value(5.0, 10.0, 4), 0.0);
    }

    #[test]
    fn weights_capped() {
        let w = adaptive_weights(&[0.0, 1e-9, 0.5, -2.0], 1.0);
        assert_eq!(w, vec![MAX_ADAPTIVE_WEIGHT, MAX_ADAPTIVE_WEIGHT, 2.0, 0.5]);
    }

    fn kind_strategy() -> impl Strategy<Value = PenaltyKind> {
        prop_oneof![
            Just(PenaltyKind::HardRidge),
            Just(PenaltyKind::ElasticNet),
            Just(PenaltyKind::AdaptiveElasticNet)
        ]
    }

    proptest! {
        #[test]
        fn prox_limits(kind in kind_strategy(), t in -10.0f64..10.0, lam in 0.0f64..5.0, k in 0.5f64..3.0) {
            let zero_lam = scalar(kind, 0.7, k, 2.0);
            prop_assert_eq!(zero_lam.prox(t, 0.0, 0), t);
            let ridge = scalar(kind, 0.0, k, 2.0);
            prop_assert!((ridge.prox(t, lam, 0) - t / (1.0 + lam)).abs() < 1e-12);
        }

        #[test]
        fn prox_is_odd_and_monotone(
            kind in kind_strategy(),
            t1 in 0.0f64..10.0,
            dt in 0.0f64..5.0,
            lam in 0.0f64..5.0,
            alpha in 0.0f64..=1.0,
            k in 0.5f64..3.0,
            w in 0.1f64..10.0,
        ) {
            let s = scalar(kind, alpha, k, w);
            prop_assert_eq!(s.prox(-t1, lam, 0), -s.prox(t1, lam, 0));
            prop_assert!(s.prox(t1 + dt, lam, 0).abs() >= s.prox(t1, lam, 0).abs());
        }

        #[test]
        fn scaled_prox_minimizes_scaled_objective(
            kind in kind_strategy(),
            t in -4.0f64..4.0,
            lam in 0.0f64..3.0,
            alpha in 0.0f64..=1.0,
            step in 0.01f64..2.0,
        ) {
            let s = scalar(kind, alpha, 1.3, 0.8);
            let got = s.prox_scaled(t, lam, 0, step);
            let obj = |th: f64| 0.5 * (t - th).powi(2) + step * s.coordinate_value(th, lam, 0);
            let mut best = obj(0.0);
            let m = 20_000;
            for i in 0..=m {
                best = best.min(obj(t * i as f64 / m as f64));
            }
            prop_assert!(obj(got) <= best + 1e-7);
        }
    }
}
