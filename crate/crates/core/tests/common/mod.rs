//! Independent oracles shared by the integration suites. Nothing here calls
//! into the code paths it checks.

#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::DMatrix;
use spt_uts::{generate, resample, GridSpec, SynthConfig, SynthTruth, UniformCurve};

/// Sample covariance of the columns of `x`, formed explicitly.
pub fn covariance(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let (n, p) = x.shape();
    let means: Vec<f64> = (0..p).map(|c| (0..n).map(|r| x[(r, c)]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            cov[i][j] = (0..n)
                .map(|r| (x[(r, i)] - means[i]) * (x[(r, j)] - means[j]))
                .sum::<f64>()
                / (n - 1) as f64;
        }
    }
    cov
}

/// Cyclic Jacobi rotations; returns eigenvalues in descending order.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let p = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..p)
            .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for i in 0..p {
            for j in i + 1..p {
                if a[i][j].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[j][j] - a[i][i]) / (2.0 * a[i][j]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let (aki, akj) = (a[k][i], a[k][j]);
                    a[k][i] = c * aki - s * akj;
                    a[k][j] = s * aki + c * akj;
                }
                for k in 0..p {
                    let (aik, ajk) = (a[i][k], a[j][k]);
                    a[i][k] = c * aik - s * ajk;
                    a[j][k] = s * aik + c * ajk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..p).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Squared-loss minimizer of `y ≈ β·x` over a uniform β grid.
pub fn grid_search_beta(x: &[f64], y: &[f64], center: f64, half_width: f64, step: f64) -> f64 {
    let loss = |b: f64| x.iter().zip(y).map(|(a, t)| (t - b * a).powi(2)).sum::<f64>();
    let steps = (2.0 * half_width / step).round() as i64;
    (0..=steps)
        .map(|i| center - half_width + i as f64 * step)
        .min_by(|a, b| loss(*a).total_cmp(&loss(*b)))
        .unwrap()
}

/// Exhaustive best single split of one feature by within-group squared
/// error over midpoint thresholds. Returns (threshold, sse) for each
/// candidate, best first.
pub fn split_candidates(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let mut xs: Vec<f64> = x.to_vec();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let sse = |v: &[f64]| {
        if v.is_empty() {
            return 0.0;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>()
    };
    let mut out: Vec<(f64, f64)> = xs
        .windows(2)
        .map(|w| {
            let t = 0.5 * (w[0] + w[1]);
            let left: Vec<f64> = x.iter().zip(y).filter(|(a, _)| **a <= t).map(|(_, b)| *b).collect();
            let right: Vec<f64> = x.iter().zip(y).filter(|(a, _)| **a > t).map(|(_, b)| *b).collect();
            (t, sse(&left) + sse(&right))
        })
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

/// OLS with intercept via the normal equations and Gaussian elimination.
pub fn normal_equations(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let (n, m) = x.shape();
    let cols = m + 1;
    let a = |r: usize, c: usize| if c == 0 { 1.0 } else { x[(r, c - 1)] };
    let mut aug = vec![vec![0.0; cols + 1]; cols];
    for i in 0..cols {
        for j in 0..cols {
            aug[i][j] = (0..n).map(|r| a(r, i) * a(r, j)).sum();
        }
        aug[i][cols] = (0..n).map(|r| a(r, i) * y[r]).sum();
    }
    for k in 0..cols {
        let piv = (k..cols).max_by(|&i, &j| aug[i][k].abs().total_cmp(&aug[j][k].abs())).unwrap();
        aug.swap(k, piv);
        for i in k + 1..cols {
            let f = aug[i][k] / aug[k][k];
            for j in k..=cols {
                aug[i][j] -= f * aug[k][j];
            }
        }
    }
    let mut b = vec![0.0; cols];
    for k in (0..cols).rev() {
        let s: f64 = (k + 1..cols).map(|j| aug[k][j] * b[j]).sum();
        b[k] = (aug[k][cols] - s) / aug[k][k];
    }
    b
}

pub fn synthetic(cfg: &SynthConfig) -> (Vec<UniformCurve>, SynthTruth) {
    let (raw, truth) = generate(cfg).unwrap();
    let grid = GridSpec::default();
    (raw.iter().map(|c| resample(c, &grid).unwrap()).collect(), truth)
}

/// Pearson correlation of two equal-length columns.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
