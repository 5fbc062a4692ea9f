//! Compositional preprocessing: zero replacement, closure, log transforms,
//! design normalization and linear-constraint construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_basis, RANK_RTOL};

/// Default pseudo-count substituted for zero reads.
pub const DEFAULT_PSEUDO_COUNT: f64 = 0.5;

/// Log-transform applied to the closed compositions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogTransform {
    /// Elementwise natural log.
    #[default]
    Log,
    /// Centered log-ratio: log minus the row mean of logs.
    Clr,
}

/// Replace every zero count by `pseudo`, leaving positive entries untouched.
pub fn replace_zeros(counts: &DMatrix<f64>, pseudo: f64) -> Result<DMatrix<f64>> {
    if !(pseudo > 0.0) || !pseudo.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "pseudo-count must be positive, got {pseudo}"
        )));
    }
    for i in 0..counts.nrows() {
        let mut any_positive = false;
        for j in 0..counts.ncols() {
            let v = counts[(i, j)];
            if v < 0.0 || !v.is_finite() {
                return Err(Error::NegativeCount { row: i, col: j, value: v });
            }
            any_positive |= v > 0.0;
        }
        if !any_positive {
            return Err(Error::AllZeroRow(i));
        }
    }
    Ok(counts.map(|v| if v == 0.0 { pseudo } else { v }))
}

fn check_positive(m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonPositive { row: i, col: j, value: v });
            }
        }
    }
    Ok(())
}

/// Close each row to the unit simplex.
pub fn total_sum_normalize(counts: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_positive(counts)?;
    let mut out = counts.clone();
    for mut row in out.row_iter_mut() {
        let total: f64 = row.iter().sum();
        row /= total;
    }
    Ok(out)
}

/// Elementwise natural logarithm of strictly positive compositions.
pub fn log_transform(compositions: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_positive(compositions)?;
    Ok(compositions.map(f64::ln))
}

/// Centered log-ratio transform; every output row sums to zero.
pub fn clr_transform(compositions: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut z = log_transform(compositions)?;
    for mut row in z.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    Ok(z)
}

/// Raw data of a log-contrast regression problem.
#[derive(Debug, Clone)]
pub struct CompositionalDataset {
    pub counts: Option<DMatrix<f64>>,
    pub compositions: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub covariates: DMatrix<f64>,
    pub y: DVector<f64>,
    pub transform: LogTransform,
}

impl CompositionalDataset {
    /// Build from raw counts: zero replacement, closure and log transform.
    pub fn from_counts(
        counts: DMatrix<f64>,
        covariates: DMatrix<f64>,
        y: DVector<f64>,
        pseudo: f64,
        transform: LogTransform,
    ) -> Result<Self> {
        let filled = replace_zeros(&counts, pseudo)?;
        let compositions = total_sum_normalize(&filled)?;
        let mut ds = Self::from_compositions(compositions, covariates, y, transform)?;
        ds.counts = Some(counts);
        Ok(ds)
    }

    /// Build from compositions that are already strictly positive.
    ///
    /// Rows are re-closed so that they sum to one.
    pub fn from_compositions(
        compositions: DMatrix<f64>,
        covariates: DMatrix<f64>,
        y: DVector<f64>,
        transform: LogTransform,
    ) -> Result<Self> {
        let n = compositions.nrows();
        if covariates.nrows() != n || y.len() != n {
            return Err(Error::Dimension(format!(
                "compositions have {n} rows, covariates {} and response {}",
                covariates.nrows(),
                y.len()
            )));
        }
        let compositions = total_sum_normalize(&compositions)?;
        let z = match transform {
            LogTransform::Log => log_transform(&compositions)?,
            LogTransform::Clr => clr_transform(&compositions)?,
        };
        Ok(Self { counts: None, compositions, z, covariates, y, transform })
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn design(&self) -> Result<Design> {
        build_design(&self.z, &self.covariates)
    }
}

/// Normalized design `X = [Z N]` together with the column maps needed to
/// move coefficients between the fitting and the original scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Design {
    #[serde(skip)]
    pub x: DMatrix<f64>,
    pub col_scale: Vec<f64>,
    pub col_center: Vec<f64>,
    pub intercept: Option<usize>,
    pub n_compositional: usize,
}

fn is_intercept(col: nalgebra::DVectorView<'_, f64>) -> bool {
    col.iter().all(|&v| v == 1.0)
}

/// Assemble `[Z N]` and scale every column to Euclidean norm `√n`.
///
/// When `N` holds an all-ones column it is taken as the intercept: it keeps
/// scale one and every other column is centered before scaling.
pub fn build_design(z: &DMatrix<f64>, covariates: &DMatrix<f64>) -> Result<Design> {
    let n = z.nrows();
    if covariates.nrows() != n {
        return Err(Error::Dimension(format!(
            "Z has {n} rows but N has {}",
            covariates.nrows()
        )));
    }
    let p = z.ncols();
    let q = p + covariates.ncols();
    let mut x = DMatrix::zeros(n, q);
    x.columns_mut(0, p).copy_from(z);
    x.columns_mut(p, covariates.ncols()).copy_from(covariates);

    let intercept = (0..covariates.ncols())
        .find(|&j| is_intercept(covariates.column(j)))
        .map(|j| p + j);
    let root_n = (n as f64).sqrt();
    let mut col_scale = vec![1.0; q];
    let mut col_center = vec![0.0; q];
    for j in 0..q {
        if Some(j) == intercept {
            continue;
        }
        let mut col = x.column_mut(j);
        if intercept.is_some() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            col_center[j] = mean;
        }
        let norm = col.norm();
        if !(norm > 1e-12 * root_n) {
            return Err(Error::ZeroColumn(j));
        }
        let scale = norm / root_n;
        col /= scale;
        col_scale[j] = scale;
    }
    Ok(Design { x, col_scale, col_center, intercept, n_compositional: p })
}

impl Design {
    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_coef(&self) -> usize {
        self.col_scale.len()
    }

    /// Fitting-scale coefficients to the scale of the raw `[Z N]` columns.
    pub fn to_original(&self, beta_fit: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(beta_fit.len());
        let mut shift = 0.0;
        for j in 0..beta_fit.len() {
            if Some(j) == self.intercept {
                continue;
            }
            out[j] = beta_fit[j] / self.col_scale[j];
            shift += self.col_center[j] * out[j];
        }
        if let Some(i) = self.intercept {
            out[i] = beta_fit[i] - shift;
        }
        out
    }

    /// Inverse of [`Design::to_original`].
    pub fn to_fit(&self, beta_orig: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(beta_orig.len());
        let mut shift = 0.0;
        for j in 0..beta_orig.len() {
            if Some(j) == self.intercept {
                continue;
            }
            out[j] = beta_orig[j] * self.col_scale[j];
            shift += self.col_center[j] * beta_orig[j];
        }
        if let Some(i) = self.intercept {
            out[i] = beta_orig[i] + shift;
        }
        out
    }

    /// Apply the stored centering and scaling to new `[Z N]` rows.
    pub fn transform(&self, z: &DMatrix<f64>, covariates: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.n_compositional
            || z.ncols() + covariates.ncols() != self.n_coef()
            || z.nrows() != covariates.nrows()
        {
            return Err(Error::Dimension(format!(
                "expected {} compositional and {} other columns",
                self.n_compositional,
                self.n_coef() - self.n_compositional
            )));
        }
        let n = z.nrows();
        let p = z.ncols();
        let mut x = DMatrix::zeros(n, self.n_coef());
        x.columns_mut(0, p).copy_from(z);
        x.columns_mut(p, covariates.ncols()).copy_from(covariates);
        for j in 0..self.n_coef() {
            let (c, s) = (self.col_center[j], self.col_scale[j]);
            x.column_mut(j).apply(|v| *v = (*v - c) / s);
        }
        Ok(x)
    }

    /// Express an original-scale constraint `Cᵀb = 0` in fitting coordinates.
    pub fn rescale_constraint(&self, constraint: &ConstraintMatrix) -> Result<ConstraintMatrix> {
        if constraint.n_coef() != self.n_coef() {
            return Err(Error::Dimension(format!(
                "constraint has {} rows, design {} columns",
                constraint.n_coef(),
                self.n_coef()
            )));
        }
        let mut c = constraint.c.clone();
        for j in 0..c.nrows() {
            let s = self.col_scale[j];
            c.row_mut(j).apply(|v| *v /= s);
        }
        ConstraintMatrix::with_groups(c, constraint.groups.clone())
    }
}

/// Linear equality constraint `Cᵀβ = 0` with its cached complement projector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintMatrix {
    #[serde(skip)]
    pub c: DMatrix<f64>,
    pub groups: Vec<Vec<usize>>,
    #[serde(skip)]
    pub proj_comp: DMatrix<f64>,
}

impl ConstraintMatrix {
    /// One zero-sum constraint per group of column indices.
    pub fn from_groups(groups: Vec<Vec<usize>>, n_coef: usize) -> Result<Self> {
        let mut c = DMatrix::zeros(n_coef, groups.len());
        let mut seen = vec![false; n_coef];
        for (r, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidParameter(format!("constraint group {r} is empty")));
            }
            for &j in g {
                if j >= n_coef || seen[j] {
                    return Err(Error::InvalidParameter(format!(
                        "column {j} is out of range or appears in two groups"
                    )));
                }
                seen[j] = true;
                c[(j, r)] = 1.0;
            }
        }
        Self::with_groups(c, groups)
    }

    /// Wrap an arbitrary full-column-rank matrix.
    pub fn from_matrix(c: DMatrix<f64>) -> Result<Self> {
        Self::with_groups(c, Vec::new())
    }

    fn with_groups(c: DMatrix<f64>, groups: Vec<Vec<usize>>) -> Result<Self> {
        let proj_comp = projector_complement(&c)?;
        Ok(Self { c, groups, proj_comp })
    }

    pub fn n_coef(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_constraints(&self) -> usize {
        self.c.ncols()
    }

    /// `Cᵀβ`.
    pub fn violation(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.c.tr_mul(beta)
    }

    /// Orthogonal projection of `v` onto the null space of `Cᵀ`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.proj_comp * v
    }

    /// Permute coefficient rows: row `j` of the result is row `perm[j]` here.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let c = self.c.select_rows(perm);
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let groups = self
            .groups
            .iter()
            .map(|g| {
                let mut g: Vec<usize> = g.iter().map(|&j| inverse[j]).collect();
                g.sort_unstable();
                g
            })
            .collect();
        Self::with_groups(c, groups)
    }
}

/// Block-diagonal subcomposition constraint padded with `m` zero rows.
///
/// `group_sizes = [p]` gives the global zero-sum constraint `C = 1_p`.
pub fn build_constraint(group_sizes: &[usize], m: usize) -> Result<ConstraintMatrix> {
    if group_sizes.is_empty() || group_sizes.iter().any(|&s| s == 0) {
        return Err(Error::BadGroups {
            sizes: group_sizes.to_vec(),
            expected: group_sizes.iter().sum(),
        });
    }
    let p: usize = group_sizes.iter().sum();
    let mut groups = Vec::with_capacity(group_sizes.len());
    let mut start = 0;
    for &s in group_sizes {
        groups.push((start..start + s).collect());
        start += s;
    }
    ConstraintMatrix::from_groups(groups, p + m)
}

/// `I − C(CᵀC)⁻¹Cᵀ`, computed from an SVD of `C`.
pub fn projector_complement(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = c.nrows();
    let k = c.ncols();
    if k == 0 {
        return Ok(DMatrix::identity(q, q));
    }
    if k > q {
        return Err(Error::RankDeficient { rank: q, cols: k });
    }
    let u = column_basis(c);
    if u.ncols() < k {
        return Err(Error::RankDeficient { rank: u.ncols(), cols: k });
    }
    let mut p = DMatrix::identity(q, q) - &u * u.transpose();
    // Symmetrize away rounding.
    let pt = p.transpose();
    p = (p + pt) * 0.5;
    debug_assert!(RANK_RTOL > 0.0);
    Ok(p)
}
