//! Dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_RTOL: f64 = 1e-10;

/// Left singular vectors spanning the numerical column space of `a`.
pub fn column_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_RTOL * smax)
        .collect();
    u.select_columns(&keep)
}

/// Orthogonal projector onto the column space of `a`.
pub fn column_space_projector(a: &DMatrix<f64>) -> DMatrix<f64> {
    let u = column_basis(a);
    &u * u.transpose()
}

/// Orthonormal basis of the orthogonal complement of span(`c`).
///
/// Rank-deficient `c` is accepted; zero columns simply do not constrain.
pub fn complement_basis(c: &DMatrix<f64>) -> DMatrix<f64> {
    let q = c.nrows();
    let u = column_basis(c);
    if u.ncols() == 0 {
        return DMatrix::identity(q, q);
    }
    let proj = DMatrix::identity(q, q) - &u * u.transpose();
    let eig = SymmetricEigen::new(proj);
    let mut keep: Vec<usize> = (0..q).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    keep.sort_unstable();
    eig.eigenvectors.select_columns(&keep)
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (RANK_RTOL * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).expect("U and V were computed")
}

/// Least squares under the linear equality `cᵀ x = 0`.
pub fn constrained_lstsq(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    c: &DMatrix<f64>,
) -> DVector<f64> {
    let basis = complement_basis(c);
    let reduced = x * &basis;
    let coef = lstsq(&reduced, y);
    basis * coef
}

/// Median of a slice (average of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

pub(crate) fn select_rows_vec(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]))
}

pub(crate) fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
