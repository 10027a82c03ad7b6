//! Principal component analysis of the curve feature matrix.
//!
//! The eigenproblem is solved on whichever of the `p×p` covariance or the
//! `n×n` Gram matrix is smaller; with ~100 curves and 152 features the Gram
//! route is the common one.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PcaError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("all rows are identical; total variance is zero")]
    DegenerateData,
    #[error("variance threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Relative eigenvalue floor below which a component counts as null.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `p×k`, one orthonormal component per column.
    pub loadings: DMatrix<f64>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    pub threshold: f64,
    /// Full non-negative eigenvalue spectrum, descending.
    pub spectrum: Vec<f64>,
    /// Sum of per-column sample variances.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn cumulative_explained(&self) -> f64 {
        self.explained_ratio.iter().sum()
    }

    fn centered(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, PcaError> {
        if x.ncols() != self.n_features() {
            return Err(PcaError::ShapeMismatch {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] - self.mean[c]))
    }

    /// Scores `(X − mean)·L`.
    pub fn transform(&self, m: &FeatureMatrix) -> Result<DMatrix<f64>, PcaError> {
        self.transform_values(m.values())
    }

    pub fn transform_values(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, PcaError> {
        Ok(self.centered(x)? * &self.loadings)
    }

    /// Reconstruction `S·Lᵀ + mean`.
    pub fn inverse_transform(&self, scores: &DMatrix<f64>) -> Result<DMatrix<f64>, PcaError> {
        if scores.ncols() != self.n_components() {
            return Err(PcaError::ShapeMismatch {
                expected: self.n_components(),
                got: scores.ncols(),
            });
        }
        let mut x = scores * self.loadings.transpose();
        for (c, mut col) in x.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[c]);
        }
        Ok(x)
    }
}

pub fn fit_pca(m: &FeatureMatrix, threshold: f64) -> Result<PcaModel, PcaError> {
    fit_pca_values(m.values(), threshold)
}

pub fn fit_pca_values(x: &DMatrix<f64>, threshold: f64) -> Result<PcaModel, PcaError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PcaError::BadThreshold(threshold));
    }
    let (n, p) = x.shape();
    if n < 2 {
        return Err(PcaError::TooFewRows(n));
    }
    let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n as f64).collect();
    let xc = DMatrix::from_fn(n, p, |r, c| x[(r, c)] - mean[c]);
    let dof = (n - 1) as f64;
    let total_variance: f64 = xc.column_iter().map(|c| c.norm_squared() / dof).sum();
    if total_variance <= 0.0 {
        return Err(PcaError::DegenerateData);
    }

    let gram_route = n < p;
    let small = if gram_route {
        &xc * xc.transpose() / dof
    } else {
        xc.transpose() * &xc / dof
    };
    let eig = SymmetricEigen::new(small);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let floor = RANK_TOL * spectrum[0];
    let rank = spectrum.iter().take_while(|&&l| l > floor).count().max(1);
    let mut k = rank;
    let mut cumulative = 0.0;
    for (j, &l) in spectrum.iter().take(rank).enumerate() {
        cumulative += l / total_variance;
        if cumulative >= threshold - RANK_TOL {
            k = j + 1;
            break;
        }
    }

    let mut loadings = DMatrix::zeros(p, k);
    for (j, &idx) in order.iter().take(k).enumerate() {
        let u = eig.eigenvectors.column(idx);
        let mut v: DVector<f64> = if gram_route {
            xc.transpose() * u / (dof * spectrum[j]).sqrt()
        } else {
            u.into_owned()
        };
        let lead = v.iter().copied().enumerate().fold((0, 0.0f64), |acc, (i, a)| {
            if a.abs() > acc.1.abs() {
                (i, a)
            } else {
                acc
            }
        });
        if lead.1 < 0.0 {
            v.neg_mut();
        }
        loadings.set_column(j, &v);
    }

    let eigenvalues = spectrum[..k].to_vec();
    let explained_ratio = eigenvalues.iter().map(|l| l / total_variance).collect();
    Ok(PcaModel {
        mean,
        loadings,
        eigenvalues,
        explained_ratio,
        threshold,
        spectrum,
        total_variance,
    })
}

pub fn transform(model: &PcaModel, m: &FeatureMatrix) -> Result<DMatrix<f64>, PcaError> {
    model.transform(m)
}

pub fn inverse_transform(model: &PcaModel, scores: &DMatrix<f64>) -> Result<DMatrix<f64>, PcaError> {
    model.inverse_transform(scores)
}
