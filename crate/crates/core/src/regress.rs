//! Empirical SPT correlations with a fitted β, and ordinary least squares on
//! PCA scores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{CurveMarkers, MarkerStrategy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressError {
    #[error("zero denominator (h0 = {h0_mm} mm, v_m = {v_mm} mm)")]
    ZeroDenominator { h0_mm: f64, v_mm: f64 },
    #[error("no training samples")]
    EmptyTraining,
    #[error("feature {index} is not positive ({value})")]
    NonPositiveFeature { index: usize, value: f64 },
    #[error("{features} features but {targets} targets")]
    LengthMismatch { features: usize, targets: usize },
    #[error("design has numerical rank {rank} < {needed}")]
    RankDeficient { rank: usize, needed: usize },
    #[error("need more than {columns} rows, got {rows}")]
    TooFewRows { rows: usize, columns: usize },
    #[error("expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Which force marker the correlation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EmpiricalMode {
    /// `R_m = β·F_m / (h0·v_m)`
    MaxForce,
    /// `R_m = β·F_i / h0²`
    #[default]
    InstabilityForce,
}

impl std::fmt::Display for EmpiricalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MaxForce => "max-force",
            Self::InstabilityForce => "instability-force",
        })
    }
}

impl std::str::FromStr for EmpiricalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max-force" => Ok(Self::MaxForce),
            "instability-force" => Ok(Self::InstabilityForce),
            _ => Err(format!("unknown empirical mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalModel {
    pub beta: f64,
    pub mode: EmpiricalMode,
    pub marker_strategy: MarkerStrategy,
}

/// The correlation quantity in MPa per unit β. Forces in N and lengths in
/// mm give MPa directly.
pub fn empirical_feature(
    markers: &CurveMarkers,
    h0_mm: f64,
    mode: EmpiricalMode,
) -> Result<f64, RegressError> {
    match mode {
        EmpiricalMode::MaxForce => {
            let denom = h0_mm * markers.v_at_fmax_mm;
            if denom == 0.0 {
                return Err(RegressError::ZeroDenominator {
                    h0_mm,
                    v_mm: markers.v_at_fmax_mm,
                });
            }
            Ok(markers.f_max_n / denom)
        }
        EmpiricalMode::InstabilityForce => {
            if h0_mm == 0.0 {
                return Err(RegressError::ZeroDenominator {
                    h0_mm,
                    v_mm: markers.v_instability_mm,
                });
            }
            Ok(markers.f_instability_n / (h0_mm * h0_mm))
        }
    }
}

/// Least-squares slope through the origin, `Σxy / Σx²`.
pub fn fit_beta(
    features: &[f64],
    targets: &[f64],
    mode: EmpiricalMode,
    marker_strategy: MarkerStrategy,
) -> Result<EmpiricalModel, RegressError> {
    if features.is_empty() {
        return Err(RegressError::EmptyTraining);
    }
    if features.len() != targets.len() {
        return Err(RegressError::LengthMismatch {
            features: features.len(),
            targets: targets.len(),
        });
    }
    if let Some(index) = features.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(RegressError::NonPositiveFeature {
            index,
            value: features[index],
        });
    }
    let sxy: f64 = features.iter().zip(targets).map(|(x, y)| x * y).sum();
    let sxx: f64 = features.iter().map(|x| x * x).sum();
    Ok(EmpiricalModel {
        beta: sxy / sxx,
        mode,
        marker_strategy,
    })
}

impl EmpiricalModel {
    pub fn predict(&self, markers: &CurveMarkers, h0_mm: f64) -> Result<f64, RegressError> {
        Ok(self.beta * empirical_feature(markers, h0_mm, self.mode)?)
    }
}

pub fn predict_empirical(
    model: &EmpiricalModel,
    markers: &CurveMarkers,
    h0_mm: f64,
) -> Result<f64, RegressError> {
    model.predict(markers, h0_mm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// Relative tolerance on the diagonal of R for rank detection.
const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares with an intercept column, solved through a
/// Householder QR factorization of the augmented design.
pub fn fit_ols(design: &DMatrix<f64>, targets: &[f64]) -> Result<LinearModel, RegressError> {
    let (n, m) = design.shape();
    if targets.len() != n {
        return Err(RegressError::LengthMismatch {
            features: n,
            targets: targets.len(),
        });
    }
    if n <= m {
        return Err(RegressError::TooFewRows { rows: n, columns: m });
    }
    let augmented = DMatrix::from_fn(n, m + 1, |r, c| if c == 0 { 1.0 } else { design[(r, c - 1)] });
    let qr = augmented.qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    let rank = r
        .diagonal()
        .iter()
        .filter(|d| d.abs() > RANK_TOL * diag_max)
        .count();
    if rank < m + 1 {
        return Err(RegressError::RankDeficient { rank, needed: m + 1 });
    }
    let mut qty = DVector::from_column_slice(targets);
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, m + 1).into_owned();
    let solution = r
        .solve_upper_triangular(&rhs)
        .ok_or(RegressError::RankDeficient { rank, needed: m + 1 })?;
    Ok(LinearModel {
        intercept: solution[0],
        coefficients: solution.iter().skip(1).copied().collect(),
    })
}

impl LinearModel {
    pub fn predict(&self, scores: &DMatrix<f64>) -> Result<Vec<f64>, RegressError> {
        if scores.ncols() != self.coefficients.len() {
            return Err(RegressError::ShapeMismatch {
                expected: self.coefficients.len(),
                got: scores.ncols(),
            });
        }
        Ok(scores
            .row_iter()
            .map(|row| {
                self.intercept
                    + row
                        .iter()
                        .zip(&self.coefficients)
                        .map(|(x, b)| x * b)
                        .sum::<f64>()
            })
            .collect())
    }
}

pub fn predict_linear(model: &LinearModel, scores: &DMatrix<f64>) -> Result<Vec<f64>, RegressError> {
    model.predict(scores)
}
