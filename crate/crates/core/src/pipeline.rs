//! End-to-end predictors: curves in, R_m out.
//!
//! A [`PipelineSpec`] names one of the three model families; fitting it on
//! labeled [`UniformCurve`]s yields a [`TrainedPipeline`] holding every
//! fitted stage (standardizer, PCA, model) needed to predict new curves.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{extract_markers, CurveError, GridSpec, MarkerStrategy, UniformCurve};
use crate::features::{assemble, feature_matrix, fit_standardizer, FeatureError, FeatureMatrix, Standardizer};
use crate::forest::{fit_forest_with_workers, ForestConfig, ForestError, ForestModel};
use crate::pca::{fit_pca, PcaError, PcaModel};
use crate::regress::{
    empirical_feature, fit_beta, fit_ols, EmpiricalMode, EmpiricalModel, LinearModel, RegressError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("curve {index}: {source}")]
    Curve { index: usize, source: CurveError },
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("training curves must all carry rm_MPa")]
    Unlabeled,
    #[error("no curves given")]
    Empty,
    #[error("curve grid {got:?} does not match model grid {expected:?}")]
    GridMismatch { expected: GridSpec, got: GridSpec },
    #[error("invalid pipeline: {0}")]
    BadSpec(String),
}

/// What the forest is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ForestInput {
    #[default]
    Raw,
    Scores { variance_threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PipelineKind {
    Empirical {
        mode: EmpiricalMode,
        marker_strategy: MarkerStrategy,
    },
    PcaLm {
        variance_threshold: f64,
    },
    Forest {
        config: ForestConfig,
        input: ForestInput,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub kind: PipelineKind,
    /// Standardize features before PCA or the forest.
    pub standardize: bool,
}

impl PipelineSpec {
    pub fn empirical(mode: EmpiricalMode, marker_strategy: MarkerStrategy) -> Self {
        Self {
            kind: PipelineKind::Empirical {
                mode,
                marker_strategy,
            },
            standardize: true,
        }
    }

    pub fn pca_lm(variance_threshold: f64) -> Self {
        Self {
            kind: PipelineKind::PcaLm { variance_threshold },
            standardize: true,
        }
    }

    pub fn forest(config: ForestConfig) -> Self {
        Self {
            kind: PipelineKind::Forest {
                config,
                input: ForestInput::Raw,
            },
            standardize: true,
        }
    }

    /// Short name used in reports: `empirical`, `pca-lm` or `rf`.
    pub fn name(&self) -> &'static str {
        match self.kind {
            PipelineKind::Empirical { .. } => "empirical",
            PipelineKind::PcaLm { .. } => "pca-lm",
            PipelineKind::Forest { .. } => "rf",
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let threshold = match &self.kind {
            PipelineKind::PcaLm { variance_threshold } => Some(*variance_threshold),
            PipelineKind::Forest {
                input: ForestInput::Scores { variance_threshold },
                ..
            } => Some(*variance_threshold),
            _ => None,
        };
        if let Some(t) = threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(PipelineError::BadSpec(format!(
                    "variance threshold must lie in (0, 1], got {t}"
                )));
            }
        }
        Ok(())
    }

    /// Variance threshold of the PCA stage, when the pipeline has one.
    pub fn pca_threshold(&self) -> Option<f64> {
        match &self.kind {
            PipelineKind::PcaLm { variance_threshold } => Some(*variance_threshold),
            PipelineKind::Forest {
                input: ForestInput::Scores { variance_threshold },
                ..
            } => Some(*variance_threshold),
            _ => None,
        }
    }

    pub fn uses_features(&self) -> bool {
        !matches!(self.kind, PipelineKind::Empirical { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedModel {
    Empirical(EmpiricalModel),
    Linear(LinearModel),
    Forest(ForestModel),
}

/// Preprocessing stages fitted on feature rows only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preprocessing {
    pub standardizer: Option<Standardizer>,
    pub pca: Option<PcaModel>,
}

impl Preprocessing {
    /// Fits the feature stages `spec` calls for on `m`. Targets are never read.
    pub fn fit(spec: &PipelineSpec, m: &FeatureMatrix) -> Result<Self, PipelineError> {
        if !spec.uses_features() {
            return Ok(Self::default());
        }
        let standardizer = if spec.standardize {
            Some(fit_standardizer(m)?)
        } else {
            None
        };
        let pca = match spec.pca_threshold() {
            Some(t) => {
                let input = match &standardizer {
                    Some(s) => s.apply(m)?,
                    None => m.clone(),
                };
                Some(fit_pca(&input, t)?)
            }
            None => None,
        };
        Ok(Self { standardizer, pca })
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<DMatrix<f64>, PipelineError> {
        let standardized = match &self.standardizer {
            Some(s) => s.apply(m)?,
            None => m.clone(),
        };
        Ok(match &self.pca {
            Some(p) => p.transform(&standardized)?,
            None => standardized.values().clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub spec: PipelineSpec,
    pub grid: GridSpec,
    pub standardizer: Option<Standardizer>,
    pub pca: Option<PcaModel>,
    pub model: FittedModel,
}

fn targets_of(curves: &[UniformCurve]) -> Result<Vec<f64>, PipelineError> {
    curves
        .iter()
        .map(|c| c.meta().rm_mpa.ok_or(PipelineError::Unlabeled))
        .collect()
}

fn empirical_features(
    curves: &[UniformCurve],
    mode: EmpiricalMode,
    strategy: MarkerStrategy,
) -> Result<Vec<f64>, PipelineError> {
    curves
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let markers = extract_markers(c, strategy)
                .map_err(|source| PipelineError::Curve { index, source })?;
            Ok(empirical_feature(&markers, c.meta().thickness_mm, mode)?)
        })
        .collect()
}

fn check_grid(curves: &[UniformCurve], grid: &GridSpec) -> Result<(), PipelineError> {
    match curves.iter().find(|c| c.grid() != grid) {
        Some(c) => Err(PipelineError::GridMismatch {
            expected: *grid,
            got: *c.grid(),
        }),
        None => Ok(()),
    }
}

/// Fits every stage on `curves`.
pub fn fit_pipeline(curves: &[UniformCurve], spec: &PipelineSpec) -> Result<TrainedPipeline, PipelineError> {
    fit_pipeline_with(curves, spec, None, None)
}

/// Fits the pipeline, optionally reusing already fitted preprocessing
/// stages and pinning the forest worker count.
pub fn fit_pipeline_with(
    curves: &[UniformCurve],
    spec: &PipelineSpec,
    preprocessing: Option<&Preprocessing>,
    workers: Option<usize>,
) -> Result<TrainedPipeline, PipelineError> {
    spec.validate()?;
    let first = curves.first().ok_or(PipelineError::Empty)?;
    let grid = *first.grid();
    check_grid(curves, &grid)?;
    let y = targets_of(curves)?;

    let (pre, model) = match &spec.kind {
        PipelineKind::Empirical {
            mode,
            marker_strategy,
        } => {
            let x = empirical_features(curves, *mode, *marker_strategy)?;
            let model = fit_beta(&x, &y, *mode, *marker_strategy)?;
            (Preprocessing::default(), FittedModel::Empirical(model))
        }
        PipelineKind::PcaLm { .. } | PipelineKind::Forest { .. } => {
            let (m, _) = assemble(curves)?;
            let pre = match preprocessing {
                Some(p) => p.clone(),
                None => Preprocessing::fit(spec, &m)?,
            };
            let design = pre.apply(&m)?;
            let model = match &spec.kind {
                PipelineKind::PcaLm { .. } => FittedModel::Linear(fit_ols(&design, &y)?),
                PipelineKind::Forest { config, .. } => {
                    FittedModel::Forest(fit_forest_with_workers(&design, &y, config, workers)?)
                }
                PipelineKind::Empirical { .. } => unreachable!(),
            };
            (pre, model)
        }
    };
    Ok(TrainedPipeline {
        spec: spec.clone(),
        grid,
        standardizer: pre.standardizer,
        pca: pre.pca,
        model,
    })
}

impl TrainedPipeline {
    pub fn preprocessing(&self) -> Preprocessing {
        Preprocessing {
            standardizer: self.standardizer.clone(),
            pca: self.pca.clone(),
        }
    }

    /// Predicted R_m in MPa for each curve. Curves need not be labeled.
    pub fn predict(&self, curves: &[UniformCurve]) -> Result<Vec<f64>, PipelineError> {
        if curves.is_empty() {
            return Ok(Vec::new());
        }
        check_grid(curves, &self.grid)?;
        match &self.model {
            FittedModel::Empirical(model) => {
                let x = empirical_features(curves, model.mode, model.marker_strategy)?;
                Ok(x.iter().map(|v| model.beta * v).collect())
            }
            FittedModel::Linear(lm) => {
                let m = feature_matrix(curves)?;
                Ok(lm.predict(&self.preprocessing().apply(&m)?)?)
            }
            FittedModel::Forest(rf) => {
                let m = feature_matrix(curves)?;
                Ok(rf.predict(&self.preprocessing().apply(&m)?)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{resample, SpecimenMeta};
    use crate::synth::{generate, SynthConfig};

    fn synthetic(noise: f64) -> Vec<UniformCurve> {
        let cfg = SynthConfig {
            n_materials: 3,
            curves_per_material: 8,
            noise_sigma_n: noise,
            ..Default::default()
        };
        let (raw, _) = generate(&cfg).unwrap();
        raw.iter().map(|c| resample(c, &GridSpec::default()).unwrap()).collect()
    }

    #[test]
    fn empirical_recovers_beta() {
        let curves = synthetic(0.0);
        let spec = PipelineSpec::empirical(EmpiricalMode::InstabilityForce, MarkerStrategy::PerCurve);
        let fitted = fit_pipeline(&curves, &spec).unwrap();
        let FittedModel::Empirical(m) = &fitted.model else { panic!() };
        assert!((m.beta - 0.3).abs() < 1e-9);
        let pred = fitted.predict(&curves).unwrap();
        for (p, c) in pred.iter().zip(&curves) {
            let rm = c.meta().rm_mpa.unwrap();
            assert!((p - rm).abs() < 1e-6 * rm);
        }
    }

    #[test]
    fn pca_lm_and_forest_fit() {
        let curves = synthetic(2.0);
        for spec in [PipelineSpec::pca_lm(0.99), PipelineSpec::forest(ForestConfig { n_trees: 20, ..Default::default() })] {
            let fitted = fit_pipeline(&curves, &spec).unwrap();
            let pred = fitted.predict(&curves).unwrap();
            assert_eq!(pred.len(), curves.len());
            assert!(pred.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn unlabeled_training_rejected() {
        let grid = GridSpec::default();
        let meta = SpecimenMeta::new("x", 20.0, 0.5, None).unwrap();
        let c = UniformCurve::new(grid, (0..151).map(f64::from).collect(), meta).unwrap();
        let spec = PipelineSpec::pca_lm(0.99);
        assert_eq!(fit_pipeline(&[c.clone(), c], &spec), Err(PipelineError::Unlabeled));
    }

    #[test]
    fn grid_mismatch_on_predict() {
        let curves = synthetic(0.0);
        let fitted = fit_pipeline(&curves, &PipelineSpec::pca_lm(0.99)).unwrap();
        let other = GridSpec::spanning(0.0, 1.5, 100).unwrap();
        let raw = curves[0].to_raw().unwrap();
        let c = resample(&raw, &other).unwrap();
        assert!(matches!(fitted.predict(&[c]), Err(PipelineError::GridMismatch { .. })));
        assert_eq!(fitted.predict(&[]).unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn bad_threshold() {
        let curves = synthetic(0.0);
        assert!(matches!(
            fit_pipeline(&curves, &PipelineSpec::pca_lm(1.5)),
            Err(PipelineError::BadSpec(_))
        ));
    }
}
