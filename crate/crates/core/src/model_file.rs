//! Versioned JSON container for a trained pipeline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::curve::GridSpec;
use crate::features::Standardizer;
use crate::pca::PcaModel;
use crate::pipeline::{FittedModel, PipelineKind, PipelineSpec, TrainedPipeline};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("unsupported model format_version {0} (this build reads {FORMAT_VERSION})")]
    UnknownVersion(u64),
    #[error("model file has no format_version")]
    MissingVersion,
    #[error("malformed model file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("model components do not match the pipeline: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    /// SHA-256 of the training manifest bytes, hex encoded.
    pub manifest_sha256: String,
}

impl Provenance {
    pub fn new(seed: u64, manifest_bytes: &[u8]) -> Self {
        Self {
            seed,
            timestamp: None,
            manifest_sha256: hex::encode(Sha256::digest(manifest_bytes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub pipeline: PipelineSpec,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaModel>,
    pub model: FittedModel,
    pub provenance: Provenance,
}

impl ModelFile {
    pub fn new(trained: TrainedPipeline, provenance: Provenance) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            pipeline: trained.spec,
            grid: trained.grid,
            standardizer: trained.standardizer,
            pca: trained.pca,
            model: trained.model,
            provenance,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model file serializes")
    }

    /// Parses and validates a model file. Unknown versions are refused
    /// before any other field is interpreted.
    pub fn from_json(text: &str) -> Result<Self, ModelFileError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or(ModelFileError::MissingVersion)?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(ModelFileError::UnknownVersion(version));
        }
        let file: Self = serde_json::from_value(value)?;
        file.check_components()?;
        Ok(file)
    }

    fn check_components(&self) -> Result<(), ModelFileError> {
        let bad = |m: &str| Err(ModelFileError::Inconsistent(m.to_string()));
        let uses_features = self.pipeline.uses_features();
        match (&self.pipeline.kind, &self.model) {
            (PipelineKind::Empirical { .. }, FittedModel::Empirical(_))
            | (PipelineKind::PcaLm { .. }, FittedModel::Linear(_))
            | (PipelineKind::Forest { .. }, FittedModel::Forest(_)) => {}
            _ => return bad("model kind differs from pipeline kind"),
        }
        if (uses_features && self.pipeline.standardize) != self.standardizer.is_some() {
            return bad("standardizer presence differs from pipeline");
        }
        if self.pipeline.pca_threshold().is_some() != self.pca.is_some() {
            return bad("PCA presence differs from pipeline");
        }
        Ok(())
    }

    pub fn into_trained(self) -> TrainedPipeline {
        TrainedPipeline {
            spec: self.pipeline,
            grid: self.grid,
            standardizer: self.standardizer,
            pca: self.pca,
            model: self.model,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::MarkerStrategy;
    use crate::regress::{EmpiricalMode, EmpiricalModel};

    fn empirical_file() -> ModelFile {
        let spec = PipelineSpec::empirical(EmpiricalMode::InstabilityForce, MarkerStrategy::MaxSlope);
        ModelFile::new(
            TrainedPipeline {
                spec,
                grid: GridSpec::default(),
                standardizer: None,
                pca: None,
                model: FittedModel::Empirical(EmpiricalModel {
                    beta: 0.1 + 0.2,
                    mode: EmpiricalMode::InstabilityForce,
                    marker_strategy: MarkerStrategy::MaxSlope,
                }),
            },
            Provenance::new(7, b"manifest"),
        )
    }

    #[test]
    fn round_trip_is_exact() {
        let f = empirical_file();
        let back = ModelFile::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
        let FittedModel::Empirical(m) = back.model else { panic!() };
        assert_eq!(m.beta.to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn refuses_unknown_version() {
        let text = empirical_file().to_json().replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(ModelFile::from_json(&text), Err(ModelFileError::UnknownVersion(2))));
        assert!(matches!(ModelFile::from_json("{}"), Err(ModelFileError::MissingVersion)));
    }

    #[test]
    fn refuses_inconsistent_components() {
        let mut f = empirical_file();
        f.pipeline = PipelineSpec::pca_lm(0.99);
        assert!(matches!(
            ModelFile::from_json(&f.to_json()),
            Err(ModelFileError::Inconsistent(_))
        ));
    }

    #[test]
    fn digest_is_sha256() {
        let p = Provenance::new(1, b"abc");
        assert_eq!(
            p.manifest_sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
