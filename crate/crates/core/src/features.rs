//! Feature matrix assembly (grid forces + test temperature) and column
//! standardization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{GridSpec, SpecimenMeta, UniformCurve};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("curves are sampled on different grids (curve {0} differs from curve 0)")]
    MixedGrids(usize),
    #[error("{labeled} of {total} curves carry rm_MPa; either all or none must")]
    PartialTargets { labeled: usize, total: usize },
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("no curves given")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: DMatrix<f64>,
    column_labels: Vec<String>,
    row_meta: Vec<SpecimenMeta>,
}

impl FeatureMatrix {
    pub fn new(
        values: DMatrix<f64>,
        column_labels: Vec<String>,
        row_meta: Vec<SpecimenMeta>,
    ) -> Result<Self, FeatureError> {
        if column_labels.len() != values.ncols() {
            return Err(FeatureError::ShapeMismatch {
                expected: values.ncols(),
                got: column_labels.len(),
            });
        }
        if row_meta.len() != values.nrows() {
            return Err(FeatureError::ShapeMismatch {
                expected: values.nrows(),
                got: row_meta.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self {
            values,
            column_labels,
            row_meta,
        })
    }

    /// Matrix with generic labels `x0, x1, …` and no specimen metadata.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self, FeatureError> {
        check_finite(&values)?;
        let column_labels = (0..values.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            values,
            column_labels,
            row_meta: Vec::new(),
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_labels(&self) -> &[String] {
        &self.column_labels
    }

    pub fn row_meta(&self) -> &[SpecimenMeta] {
        &self.row_meta
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `idx` in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let values = self.values.select_rows(idx.iter());
        let row_meta = if self.row_meta.is_empty() {
            Vec::new()
        } else {
            idx.iter().map(|&i| self.row_meta[i].clone()).collect()
        };
        Self {
            values,
            column_labels: self.column_labels.clone(),
            row_meta,
        }
    }

    pub(crate) fn with_values(&self, values: DMatrix<f64>) -> Self {
        Self {
            values,
            column_labels: self.column_labels.clone(),
            row_meta: self.row_meta.clone(),
        }
    }
}

fn check_finite(values: &DMatrix<f64>) -> Result<(), FeatureError> {
    for col in 0..values.ncols() {
        for row in 0..values.nrows() {
            if !values[(row, col)].is_finite() {
                return Err(FeatureError::NonFinite { row, col });
            }
        }
    }
    Ok(())
}

/// Ground-truth UTS values in MPa, aligned with feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetVector(Vec<f64>);

impl TargetVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FeatureError> {
        if let Some(row) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(FeatureError::NonFinite { row, col: 0 });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self(idx.iter().map(|&i| self.0[i]).collect())
    }
}

pub fn column_labels(grid: &GridSpec) -> Vec<String> {
    (0..grid.n_points)
        .map(|i| format!("F@{:.3}mm", grid.point(i)))
        .chain(std::iter::once("temperature_C".to_string()))
        .collect()
}

/// Row `i` is the force vector of `curves[i]` followed by its temperature.
/// Labels are not read.
pub fn feature_matrix(curves: &[UniformCurve]) -> Result<FeatureMatrix, FeatureError> {
    let first = curves.first().ok_or(FeatureError::Empty)?;
    let grid = *first.grid();
    if let Some(i) = curves.iter().position(|c| *c.grid() != grid) {
        return Err(FeatureError::MixedGrids(i));
    }
    let p = grid.n_points + 1;
    let values = DMatrix::from_fn(curves.len(), p, |r, c| {
        if c < grid.n_points {
            curves[r].force_n()[c]
        } else {
            curves[r].meta().temperature_c
        }
    });
    let row_meta = curves.iter().map(|c| c.meta().clone()).collect();
    FeatureMatrix::new(values, column_labels(&grid), row_meta)
}

/// Features plus targets; targets are returned when every curve is labeled.
pub fn assemble(
    curves: &[UniformCurve],
) -> Result<(FeatureMatrix, Option<TargetVector>), FeatureError> {
    let matrix = feature_matrix(curves)?;
    let labeled = curves.iter().filter(|c| c.meta().rm_mpa.is_some()).count();
    if labeled != 0 && labeled != curves.len() {
        return Err(FeatureError::PartialTargets {
            labeled,
            total: curves.len(),
        });
    }
    let targets = if labeled == 0 {
        None
    } else {
        Some(TargetVector::new(
            curves.iter().filter_map(|c| c.meta().rm_mpa).collect(),
        )?)
    };
    Ok((matrix, targets))
}

/// Per-column mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Strictly positive; 1 where the column has zero deviation.
    pub scales: Vec<f64>,
}

pub fn fit_standardizer(m: &FeatureMatrix) -> Result<Standardizer, FeatureError> {
    let x = m.values();
    let n = x.nrows();
    if n < 2 {
        return Err(FeatureError::TooFewRows(n));
    }
    let mut means = Vec::with_capacity(x.ncols());
    let mut scales = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        means.push(mean);
        scales.push(if sd > 0.0 { sd } else { 1.0 });
    }
    Ok(Standardizer { means, scales })
}

impl Standardizer {
    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        self.check_width(m.ncols())?;
        let x = m.values();
        let z = DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.means[c]) / self.scales[c]
        });
        Ok(m.with_values(z))
    }

    pub fn invert(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        self.check_width(m.ncols())?;
        let z = m.values();
        let x = DMatrix::from_fn(z.nrows(), z.ncols(), |r, c| {
            z[(r, c)] * self.scales[c] + self.means[c]
        });
        Ok(m.with_values(x))
    }

    fn check_width(&self, got: usize) -> Result<(), FeatureError> {
        if got != self.means.len() {
            return Err(FeatureError::ShapeMismatch {
                expected: self.means.len(),
                got,
            });
        }
        Ok(())
    }
}

pub fn apply_standardizer(
    s: &Standardizer,
    m: &FeatureMatrix,
) -> Result<FeatureMatrix, FeatureError> {
    s.apply(m)
}
