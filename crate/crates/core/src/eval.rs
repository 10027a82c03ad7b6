//! k-fold cross-validation and RMSE.
//!
//! Every stage of a pipeline (standardizer, PCA, model) is refit inside each
//! fold from the training rows alone. [`CvOptions::legacy_global_pca`]
//! instead fits the feature stages once on all rows, which lets feature
//! statistics of held-out rows reach the fold models.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::UniformCurve;
use crate::features::assemble;
use crate::forest::ForestConfig;
use crate::pipeline::{
    fit_pipeline_with, PipelineError, PipelineKind, PipelineSpec, Preprocessing, TrainedPipeline,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{pred} predictions but {truth} true values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("empty input")]
    Empty,
    #[error("k = {k} must satisfy 2 <= k <= {n}")]
    BadK { k: usize, n: usize },
    #[error("row {0} has no rm_MPa")]
    Unlabeled(usize),
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: PipelineError },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Splits `order` into `k` consecutive chunks whose sizes differ by at most one.
fn partition(order: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[at..at + len].to_vec());
        at += len;
    }
    folds
}

/// Seeded shuffle of `0..n` cut into `k` balanced folds.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 || k > n {
        return Err(EvalError::BadK { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(partition(&order, k))
}

/// How rows are assigned to folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldScheme {
    /// Uniform seeded shuffle.
    #[default]
    Shuffled,
    /// Each material's rows are shuffled and dealt round-robin over the
    /// folds, so every fold sees every material in proportion.
    StratifiedByMaterial,
    /// Whole materials are assigned to folds; no material appears on both
    /// sides of a split.
    GroupedByMaterial,
}

impl std::str::FromStr for FoldScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shuffled" => Ok(Self::Shuffled),
            "stratified" => Ok(Self::StratifiedByMaterial),
            "grouped" => Ok(Self::GroupedByMaterial),
            _ => Err(format!("unknown fold scheme `{s}`")),
        }
    }
}

pub fn material_folds(
    materials: &[&str],
    k: usize,
    seed: u64,
    scheme: FoldScheme,
) -> Result<Vec<Vec<usize>>, EvalError> {
    let n = materials.len();
    if k < 2 || k > n {
        return Err(EvalError::BadK { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, m) in materials.iter().enumerate() {
        groups.entry(m).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); k];
    match scheme {
        FoldScheme::Shuffled => return kfold_split(n, k, seed),
        FoldScheme::StratifiedByMaterial => {
            let mut next = 0;
            for rows in groups.values_mut() {
                rows.shuffle(&mut rng);
                for &r in rows.iter() {
                    folds[next % k].push(r);
                    next += 1;
                }
            }
        }
        FoldScheme::GroupedByMaterial => {
            if groups.len() < k {
                return Err(EvalError::BadK { k, n: groups.len() });
            }
            let mut names: Vec<&str> = groups.keys().copied().collect();
            names.shuffle(&mut rng);
            for (g, name) in names.iter().enumerate() {
                folds[g % k].extend(&groups[name]);
            }
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CvOptions {
    pub scheme: FoldScheme,
    /// Fit standardizer and PCA once on all rows before splitting.
    pub legacy_global_pca: bool,
    /// Forest training threads per fold; `None` uses the global pool.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub row: usize,
    pub true_mpa: f64,
    pub pred_mpa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub pipeline: String,
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
    /// Sample standard deviation over folds.
    pub std_rmse: f64,
    pub k: usize,
    pub seed: u64,
    /// Held-out predictions, ordered by row.
    pub per_sample: Vec<SamplePrediction>,
    pub folds: Vec<Vec<usize>>,
    pub fold_models: Vec<TrainedPipeline>,
}

/// Per-fold forest seed, a SplitMix64 step over `(seed, fold)`.
fn fold_seed(seed: u64, fold: usize) -> u64 {
    let mut z = seed ^ (fold as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fold_spec(spec: &PipelineSpec, fold: usize) -> PipelineSpec {
    match &spec.kind {
        PipelineKind::Forest { config, input } => PipelineSpec {
            kind: PipelineKind::Forest {
                config: ForestConfig {
                    seed: fold_seed(config.seed, fold),
                    ..config.clone()
                },
                input: *input,
            },
            standardize: spec.standardize,
        },
        _ => spec.clone(),
    }
}

pub fn cross_validate(
    curves: &[UniformCurve],
    spec: &PipelineSpec,
    k: usize,
    seed: u64,
) -> Result<CvReport, EvalError> {
    cross_validate_with(curves, spec, k, seed, &CvOptions::default())
}

pub fn cross_validate_with(
    curves: &[UniformCurve],
    spec: &PipelineSpec,
    k: usize,
    seed: u64,
    options: &CvOptions,
) -> Result<CvReport, EvalError> {
    spec.validate()?;
    let truth: Vec<f64> = curves
        .iter()
        .enumerate()
        .map(|(i, c)| c.meta().rm_mpa.ok_or(EvalError::Unlabeled(i)))
        .collect::<Result<_, _>>()?;
    let materials: Vec<&str> = curves.iter().map(|c| c.meta().material_id.as_str()).collect();
    let folds = material_folds(&materials, k, seed, options.scheme)?;

    let global = if options.legacy_global_pca && spec.uses_features() {
        let (m, _) = assemble(curves).map_err(PipelineError::from)?;
        Some(Preprocessing::fit(spec, &m)?)
    } else {
        None
    };

    let results: Vec<(TrainedPipeline, Vec<f64>)> = folds
        .par_iter()
        .enumerate()
        .map(|(fold, held_out)| {
            let mut is_held = vec![false; curves.len()];
            for &i in held_out {
                is_held[i] = true;
            }
            let train: Vec<UniformCurve> = curves
                .iter()
                .zip(&is_held)
                .filter(|(_, &h)| !h)
                .map(|(c, _)| c.clone())
                .collect();
            let test: Vec<UniformCurve> = held_out.iter().map(|&i| curves[i].clone()).collect();
            let model = fit_pipeline_with(&train, &fold_spec(spec, fold), global.as_ref(), options.workers)
                .map_err(|source| EvalError::Fold { fold, source })?;
            let pred = model
                .predict(&test)
                .map_err(|source| EvalError::Fold { fold, source })?;
            Ok((model, pred))
        })
        .collect::<Result<_, EvalError>>()?;

    let mut fold_rmse = Vec::with_capacity(k);
    let mut per_sample = Vec::with_capacity(curves.len());
    let mut fold_models = Vec::with_capacity(k);
    for (held_out, (model, pred)) in folds.iter().zip(results) {
        let t: Vec<f64> = held_out.iter().map(|&i| truth[i]).collect();
        fold_rmse.push(rmse(&pred, &t)?);
        per_sample.extend(held_out.iter().zip(&pred).map(|(&row, &p)| SamplePrediction {
            row,
            true_mpa: truth[row],
            pred_mpa: p,
        }));
        fold_models.push(model);
    }
    per_sample.sort_by_key(|s| s.row);

    let mean_rmse = fold_rmse.iter().sum::<f64>() / k as f64;
    let std_rmse = (fold_rmse.iter().map(|r| (r - mean_rmse).powi(2)).sum::<f64>()
        / (k - 1) as f64)
        .sqrt();
    Ok(CvReport {
        pipeline: spec.name().to_string(),
        fold_rmse,
        mean_rmse,
        std_rmse,
        k,
        seed,
        per_sample,
        folds,
        fold_models,
    })
}

impl CvReport {
    /// `fold,rmse_MPa`
    pub fn write_folds_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fold", "rmse_MPa"])?;
        for (f, r) in self.fold_rmse.iter().enumerate() {
            w.write_record([f.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `row,true_MPa,pred_MPa`
    pub fn write_samples_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "true_MPa", "pred_MPa"])?;
        for s in &self.per_sample {
            w.write_record([s.row.to_string(), s.true_mpa.to_string(), s.pred_mpa.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `pipeline,k,mean_rmse_MPa,std_rmse_MPa` data line (no header).
    pub fn summary_line(&self) -> String {
        format!("{},{},{},{}", self.pipeline, self.k, self.mean_rmse, self.std_rmse)
    }
}

pub const SUMMARY_HEADER: &str = "pipeline,k,mean_rmse_MPa,std_rmse_MPa";
