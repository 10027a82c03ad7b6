//! Ultimate tensile strength (R_m) prediction from small punch test
//! force–displacement curves.
//!
//! Three predictor families share one data path:
//!
//! * the empirical correlations `R_m = β·F_m/(h0·v_m)` and `R_m = β·F_i/h0²`
//!   with a least-squares β ([`regress`]),
//! * PCA of the resampled curve plus temperature followed by ordinary least
//!   squares ([`pca`], [`regress`]),
//! * a random forest on the resampled curve ([`forest`]).
//!
//! [`eval`] cross-validates any of them without leaking held-out rows, and
//! [`synth`] produces datasets with planted ground truth for verification.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod curve;
pub mod dataset;
pub mod eval;
pub mod features;
pub mod forest;
pub mod model_file;
pub mod pca;
pub mod pipeline;
pub mod regress;
pub mod synth;

pub use curve::{
    extract_markers, parse_curve_csv, resample, CurveError, CurveMarkers, GridSpec, MarkerStrategy,
    RawCurve, SpecimenMeta, UniformCurve,
};
pub use eval::{cross_validate, cross_validate_with, kfold_split, rmse, CvOptions, CvReport, FoldScheme};
pub use features::{assemble, feature_matrix, fit_standardizer, FeatureMatrix, Standardizer, TargetVector};
pub use forest::{fit_forest, ForestConfig, ForestModel};
pub use model_file::ModelFile;
pub use pca::{fit_pca, PcaModel};
pub use pipeline::{fit_pipeline, FittedModel, ForestInput, PipelineKind, PipelineSpec, TrainedPipeline};
pub use regress::{EmpiricalMode, EmpiricalModel, LinearModel};
pub use synth::{generate, SynthConfig, SynthTruth};
