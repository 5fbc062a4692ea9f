//! Sample tables and constraint group files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use nalgebra::{DMatrix, DVector};
use rlc_core::composition::{CompositionalDataset, ConstraintMatrix, LogTransform};
use serde::{Deserialize, Serialize};

use crate::args::{DataArgs, TransformArg};
use crate::error::input_error;

pub const INTERCEPT: &str = "(intercept)";

/// CSV table with a header row, kept as text until columns are requested.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub headers: Vec<String>,
    rows: Vec<Vec<String>>,
    lines: Vec<u64>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| input_error(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut seen = HashMap::new();
        for (j, h) in headers.iter().enumerate() {
            if let Some(k) = seen.insert(h.as_str(), j) {
                return Err(input_error(format!(
                    "{}: columns {} and {} are both named {h:?}",
                    path.display(),
                    k + 1,
                    j + 1
                )));
            }
        }
        let mut rows = Vec::new();
        let mut lines = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            lines.push(rec.position().map_or(0, |p| p.line()));
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(input_error(format!("{}: no data rows", path.display())));
        }
        Ok(Self { path: path.to_path_buf(), headers, rows, lines })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name).ok_or_else(|| {
            input_error(format!(
                "{}: column {name:?} not found (columns: {})",
                self.path.display(),
                self.headers.join(", ")
            ))
        })
    }

    pub fn text_column(&self, j: usize) -> Vec<String> {
        self.rows.iter().map(|r| r[j].clone()).collect()
    }

    pub fn numeric_column(&self, j: usize) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .zip(&self.lines)
            .map(|(row, &line)| {
                let cell = &row[j];
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    input_error(format!(
                        "{}: line {line}, column {} ({:?}): cannot parse {cell:?} as a finite number",
                        self.path.display(),
                        j + 1,
                        self.headers[j]
                    ))
                })
            })
            .collect()
    }

    fn check_nonnegative(&self, j: usize, values: &[f64]) -> Result<()> {
        if let Some(i) = values.iter().position(|&v| v < 0.0) {
            return Err(input_error(format!(
                "{}: line {}, column {} ({:?}): negative component value {}",
                self.path.display(),
                self.lines[i],
                j + 1,
                self.headers[j],
                values[i]
            )));
        }
        Ok(())
    }
}

/// Column layout shared by training and prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub response: String,
    pub id: String,
    pub components: Vec<String>,
    pub covariates: Vec<String>,
    pub intercept: bool,
    pub transform: TransformArg,
    pub pseudo_count: f64,
}

impl Layout {
    /// Names of the coefficients, in design order.
    pub fn coef_names(&self) -> Vec<String> {
        let mut names = self.components.clone();
        names.extend(self.covariates.iter().cloned());
        if self.intercept {
            names.push(INTERCEPT.to_string());
        }
        names
    }

    pub fn n_coef(&self) -> usize {
        self.components.len() + self.covariates.len() + usize::from(self.intercept)
    }
}

#[derive(Debug, Clone)]
pub struct Samples {
    pub ids: Vec<String>,
    pub dataset: CompositionalDataset,
    /// Response when the table has it.
    pub y: Option<DVector<f64>>,
}

fn transform_of(t: TransformArg) -> LogTransform {
    match t {
        TransformArg::Log => LogTransform::Log,
        TransformArg::Clr => LogTransform::Clr,
    }
}

/// Resolve the column layout of a training table.
pub fn training_layout(table: &Table, args: &DataArgs) -> Result<Layout> {
    table.require(&args.response)?;
    for c in &args.covariates {
        table.require(c)?;
        if c == &args.response {
            return Err(input_error(format!("column {c:?} is both the response and a covariate")));
        }
    }
    let components: Vec<String> = table
        .headers
        .iter()
        .filter(|h| **h != args.response && **h != args.id && !args.covariates.contains(h))
        .cloned()
        .collect();
    if components.len() < 2 {
        return Err(input_error(format!(
            "{}: at least two component columns are required, found {}",
            table.path.display(),
            components.len()
        )));
    }
    if !args.pseudo_count.is_finite() || args.pseudo_count <= 0.0 {
        return Err(input_error("pseudo count must be positive"));
    }
    Ok(Layout {
        response: args.response.clone(),
        id: args.id.clone(),
        components,
        covariates: args.covariates.clone(),
        intercept: !args.no_intercept,
        transform: args.transform,
        pseudo_count: args.pseudo_count,
    })
}

/// Read the samples of `table` under `layout`. The response is required
/// only when `need_response` is set.
pub fn load_samples(table: &Table, layout: &Layout, need_response: bool) -> Result<Samples> {
    let n = table.n_rows();
    let ids = match table.index_of(&layout.id) {
        Some(j) => table.text_column(j),
        None => (1..=n).map(|i| i.to_string()).collect(),
    };
    let p = layout.components.len();
    let mut counts = DMatrix::zeros(n, p);
    for (k, name) in layout.components.iter().enumerate() {
        let j = table.require(name)?;
        let col = table.numeric_column(j)?;
        table.check_nonnegative(j, &col)?;
        counts.set_column(k, &DVector::from_vec(col));
    }
    let q = layout.covariates.len() + usize::from(layout.intercept);
    let mut cov = DMatrix::from_element(n, q, 1.0);
    for (k, name) in layout.covariates.iter().enumerate() {
        let j = table.require(name)?;
        cov.set_column(k, &DVector::from_vec(table.numeric_column(j)?));
    }
    let y = match table.index_of(&layout.response) {
        Some(j) => Some(DVector::from_vec(table.numeric_column(j)?)),
        None if need_response => {
            table.require(&layout.response)?;
            None
        }
        None => None,
    };
    let response = y.clone().unwrap_or_else(|| DVector::zeros(n));
    let dataset = CompositionalDataset::from_counts(
        counts,
        cov,
        response,
        layout.pseudo_count,
        transform_of(layout.transform),
    )
    .map_err(|e| input_error(format!("{}: {e}", table.path.display())))?;
    Ok(Samples { ids, dataset, y })
}

/// Read a group file: one group per non-empty line, components separated by
/// commas or whitespace, `#` starts a comment line.
pub fn read_groups(path: &Path, layout: &Layout) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
    let mut groups = Vec::new();
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut group = Vec::new();
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let j = layout.components.iter().position(|c| c == tok).ok_or_else(|| {
                input_error(format!("{}: line {}: unknown component column {tok:?}", path.display(), i + 1))
            })?;
            if let Some(prev) = owner.insert(&layout.components[j], i + 1) {
                return Err(input_error(format!(
                    "{}: line {}: component {tok:?} already listed on line {prev}",
                    path.display(),
                    i + 1
                )));
            }
            group.push(j);
        }
        groups.push(group);
    }
    if groups.is_empty() {
        return Err(input_error(format!("{}: no groups", path.display())));
    }
    Ok(groups)
}

pub fn constraint_for(layout: &Layout, groups: Option<Vec<Vec<usize>>>) -> Result<ConstraintMatrix> {
    let groups = groups.unwrap_or_else(|| vec![(0..layout.components.len()).collect()]);
    Ok(ConstraintMatrix::from_groups(groups, layout.n_coef())?)
}
