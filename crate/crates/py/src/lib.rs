//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spt_uts::curve::parse_curve_csv;
use spt_uts::eval::{cross_validate_with, kfold_split, CvOptions, FoldScheme};
use spt_uts::forest::{fit_forest_with_workers, ForestConfig, ForestModel};
use spt_uts::model_file::{ModelFile, Provenance};
use spt_uts::pca::{fit_pca_values, PcaModel};
use spt_uts::pipeline::{fit_pipeline, ForestInput, PipelineKind, PipelineSpec, TrainedPipeline};
use spt_uts::regress::{fit_ols, EmpiricalMode};
use spt_uts::synth::{generate, SynthConfig};
use spt_uts::{extract_markers, resample, GridSpec, MarkerStrategy, RawCurve, SpecimenMeta, UniformCurve};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn grid(points: usize, spacing_mm: f64) -> PyResult<GridSpec> {
    GridSpec::new(0.0, spacing_mm, points).map_err(err)
}

/// A specimen curve resampled onto a uniform displacement grid.
#[pyclass(name = "Curve", module = "spt_uts", from_py_object)]
#[derive(Clone)]
pub struct PyCurve {
    inner: UniformCurve,
}

#[pymethods]
impl PyCurve {
    #[new]
    #[pyo3(signature = (displacement_mm, force_n, material_id, temperature_c, thickness_mm=0.5, rm_mpa=None, v_i_hint_mm=None, grid_points=151, grid_spacing_mm=0.01))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        displacement_mm: Vec<f64>,
        force_n: Vec<f64>,
        material_id: String,
        temperature_c: f64,
        thickness_mm: f64,
        rm_mpa: Option<f64>,
        v_i_hint_mm: Option<f64>,
        grid_points: usize,
        grid_spacing_mm: f64,
    ) -> PyResult<Self> {
        let meta = specimen(material_id, temperature_c, thickness_mm, rm_mpa, v_i_hint_mm)?;
        let raw = RawCurve::new(displacement_mm, force_n, meta).map_err(err)?;
        let inner = resample(&raw, &grid(grid_points, grid_spacing_mm)?).map_err(err)?;
        Ok(Self { inner })
    }

    /// Parses `displacement_um,force_N` text and resamples it.
    #[staticmethod]
    #[pyo3(signature = (text, material_id, temperature_c, thickness_mm=0.5, rm_mpa=None, v_i_hint_mm=None, grid_points=151, grid_spacing_mm=0.01))]
    #[allow(clippy::too_many_arguments)]
    fn from_csv(
        text: &str,
        material_id: String,
        temperature_c: f64,
        thickness_mm: f64,
        rm_mpa: Option<f64>,
        v_i_hint_mm: Option<f64>,
        grid_points: usize,
        grid_spacing_mm: f64,
    ) -> PyResult<Self> {
        let meta = specimen(material_id, temperature_c, thickness_mm, rm_mpa, v_i_hint_mm)?;
        let raw = parse_curve_csv(text, meta).map_err(err)?;
        let inner = resample(&raw, &grid(grid_points, grid_spacing_mm)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn displacement_mm(&self) -> Vec<f64> {
        self.inner.grid().points()
    }

    #[getter]
    fn force_n(&self) -> Vec<f64> {
        self.inner.force_n().to_vec()
    }

    #[getter]
    fn material_id(&self) -> String {
        self.inner.meta().material_id.clone()
    }

    #[getter]
    fn temperature_c(&self) -> f64 {
        self.inner.meta().temperature_c
    }

    #[getter]
    fn rm_mpa(&self) -> Option<f64> {
        self.inner.meta().rm_mpa
    }

    #[setter]
    fn set_rm_mpa(&mut self, value: Option<f64>) {
        self.inner.meta_mut().rm_mpa = value;
    }

    /// Index of the first grid point filled by constant extrapolation.
    #[getter]
    fn extrapolated_from(&self) -> Option<usize> {
        self.inner.extrapolated_from()
    }

    fn force_at(&self, v_mm: f64) -> f64 {
        self.inner.force_at(v_mm)
    }

    fn scaled(&self, c: f64) -> Self {
        Self { inner: self.inner.scaled(c) }
    }

    /// `F_m`, `v_m`, `F_i`, `v_i` for a marker strategy such as
    /// `"max-slope"`, `"fixed-v=0.5"` or `"per-curve"`.
    #[pyo3(signature = (strategy="max-slope"))]
    fn markers<'py>(&self, py: Python<'py>, strategy: &str) -> PyResult<Bound<'py, PyDict>> {
        let strategy: MarkerStrategy = strategy.parse().map_err(err)?;
        let m = extract_markers(&self.inner, strategy).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("f_max_n", m.f_max_n)?;
        d.set_item("v_at_fmax_mm", m.v_at_fmax_mm)?;
        d.set_item("f_instability_n", m.f_instability_n)?;
        d.set_item("v_instability_mm", m.v_instability_mm)?;
        Ok(d)
    }

    fn __len__(&self) -> usize {
        self.inner.force_n().len()
    }

    fn __repr__(&self) -> String {
        let m = self.inner.meta();
        format!(
            "Curve(material_id={:?}, temperature_c={}, points={})",
            m.material_id,
            m.temperature_c,
            self.inner.force_n().len()
        )
    }
}

fn specimen(
    material_id: String,
    temperature_c: f64,
    thickness_mm: f64,
    rm_mpa: Option<f64>,
    v_i_hint_mm: Option<f64>,
) -> PyResult<SpecimenMeta> {
    let meta = SpecimenMeta::new(material_id, temperature_c, thickness_mm, rm_mpa).map_err(err)?;
    Ok(match v_i_hint_mm {
        Some(v) => meta.with_v_i_hint(v),
        None => meta,
    })
}

fn unwrap_curves(curves: &[PyCurve]) -> Vec<UniformCurve> {
    curves.iter().map(|c| c.inner.clone()).collect()
}

/// Synthetic dataset with planted truth: `(curves, truth)` where `truth` is
/// a list of dicts with `rm_mpa`, `v_i_mm`, `f_i_n`, `temperature_c`.
#[pyfunction]
#[pyo3(signature = (n_materials=5, per_material=24, noise_sigma=0.0, seed=7, beta=0.3, h0_mm=0.5, beta_temp_coeff=0.0))]
#[allow(clippy::too_many_arguments)]
fn synth<'py>(
    py: Python<'py>,
    n_materials: usize,
    per_material: usize,
    noise_sigma: f64,
    seed: u64,
    beta: f64,
    h0_mm: f64,
    beta_temp_coeff: f64,
) -> PyResult<(Vec<PyCurve>, Vec<Bound<'py, PyDict>>)> {
    let cfg = SynthConfig {
        n_materials,
        curves_per_material: per_material,
        noise_sigma_n: noise_sigma,
        seed,
        beta_true: beta,
        h0_mm,
        beta_temp_coeff,
        ..Default::default()
    };
    let (raw, truth) = generate(&cfg).map_err(err)?;
    let g = GridSpec::default();
    let curves = raw
        .iter()
        .map(|c| resample(c, &g).map(|inner| PyCurve { inner }).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    let truth = truth
        .records
        .iter()
        .map(|t| {
            let d = PyDict::new(py);
            d.set_item("rm_mpa", t.rm_mpa)?;
            d.set_item("v_i_mm", t.v_i_mm)?;
            d.set_item("f_i_n", t.f_i_n)?;
            d.set_item("temperature_c", t.temperature_c)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((curves, truth))
}

#[pyclass(name = "Pca", module = "spt_uts", skip_from_py_object)]
pub struct PyPca {
    inner: PcaModel,
}

#[pymethods]
impl PyPca {
    /// Fits on rows of `x`, keeping components up to `threshold` of the
    /// cumulative explained variance.
    #[staticmethod]
    #[pyo3(signature = (x, threshold=0.99))]
    fn fit(x: Vec<Vec<f64>>, threshold: f64) -> PyResult<Self> {
        Ok(Self {
            inner: fit_pca_values(&matrix(&x)?, threshold).map_err(err)?,
        })
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.clone()
    }

    #[getter]
    fn explained_ratio(&self) -> Vec<f64> {
        self.inner.explained_ratio.clone()
    }

    #[getter]
    fn cumulative_explained(&self) -> f64 {
        self.inner.cumulative_explained()
    }

    /// Loadings as rows: one row per input feature.
    #[getter]
    fn loadings(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.loadings)
    }

    fn transform(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.transform_values(&matrix(&x)?).map_err(err)?))
    }

    fn inverse_transform(&self, scores: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.inverse_transform(&matrix(&scores)?).map_err(err)?))
    }
}

#[pyclass(name = "Forest", module = "spt_uts", skip_from_py_object)]
pub struct PyForest {
    inner: ForestModel,
}

#[pymethods]
impl PyForest {
    #[staticmethod]
    #[pyo3(signature = (x, y, n_trees=200, max_depth=None, min_leaf=2, mtry=None, seed=0, bootstrap=true, workers=None))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        n_trees: usize,
        max_depth: Option<usize>,
        min_leaf: usize,
        mtry: Option<usize>,
        seed: u64,
        bootstrap: bool,
        workers: Option<usize>,
    ) -> PyResult<Self> {
        let cfg = ForestConfig {
            n_trees,
            max_depth,
            min_leaf,
            mtry,
            seed,
            bootstrap,
        };
        Ok(Self {
            inner: fit_forest_with_workers(&matrix(&x)?, &y, &cfg, workers).map_err(err)?,
        })
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.predict(&matrix(&x)?).map_err(err)
    }

    #[getter]
    fn importances(&self) -> Vec<f64> {
        self.inner.importances.clone()
    }

    #[getter]
    fn oob_rmse(&self) -> Option<f64> {
        self.inner.oob_rmse
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }
}

/// An unfitted pipeline description.
#[pyclass(name = "Pipeline", module = "spt_uts", from_py_object)]
#[derive(Clone)]
pub struct PyPipeline {
    spec: PipelineSpec,
}

#[pymethods]
impl PyPipeline {
    #[staticmethod]
    #[pyo3(signature = (mode="instability-force", markers="max-slope"))]
    fn empirical(mode: &str, markers: &str) -> PyResult<Self> {
        let mode: EmpiricalMode = mode.parse().map_err(err)?;
        let markers: MarkerStrategy = markers.parse().map_err(err)?;
        Ok(Self {
            spec: PipelineSpec::empirical(mode, markers),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (threshold=0.99, standardize=true))]
    fn pca_lm(threshold: f64, standardize: bool) -> PyResult<Self> {
        let mut spec = PipelineSpec::pca_lm(threshold);
        spec.standardize = standardize;
        spec.validate().map_err(err)?;
        Ok(Self { spec })
    }

    /// `scores_threshold` feeds PCA scores to the forest instead of the raw
    /// standardized features.
    #[staticmethod]
    #[pyo3(signature = (n_trees=200, max_depth=None, min_leaf=2, mtry=None, seed=0, scores_threshold=None))]
    fn forest(
        n_trees: usize,
        max_depth: Option<usize>,
        min_leaf: usize,
        mtry: Option<usize>,
        seed: u64,
        scores_threshold: Option<f64>,
    ) -> PyResult<Self> {
        let config = ForestConfig {
            n_trees,
            max_depth,
            min_leaf,
            mtry,
            seed,
            bootstrap: true,
        };
        let mut spec = PipelineSpec::forest(config);
        if let (PipelineKind::Forest { input, .. }, Some(t)) = (&mut spec.kind, scores_threshold) {
            *input = ForestInput::Scores { variance_threshold: t };
        }
        spec.validate().map_err(err)?;
        Ok(Self { spec })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.spec.name()
    }

    fn fit(&self, curves: Vec<PyCurve>) -> PyResult<PyModel> {
        let inner = fit_pipeline(&unwrap_curves(&curves), &self.spec).map_err(err)?;
        Ok(PyModel { inner })
    }

    fn __repr__(&self) -> String {
        format!("Pipeline({})", self.spec.name())
    }
}

/// A fitted pipeline.
#[pyclass(name = "Model", module = "spt_uts", skip_from_py_object)]
pub struct PyModel {
    inner: TrainedPipeline,
}

#[pymethods]
impl PyModel {
    fn predict(&self, curves: Vec<PyCurve>) -> PyResult<Vec<f64>> {
        self.inner.predict(&unwrap_curves(&curves)).map_err(err)
    }

    /// Model file JSON, as written by the CLI.
    #[pyo3(signature = (seed=0, manifest=b"".as_slice()))]
    fn to_json(&self, seed: u64, manifest: &[u8]) -> String {
        ModelFile::new(self.inner.clone(), Provenance::new(seed, manifest)).to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ModelFile::from_json(text).map_err(err)?.into_trained(),
        })
    }

    #[getter]
    fn pipeline(&self) -> &'static str {
        self.inner.spec.name()
    }
}

/// k-fold cross-validation. Returns a dict with `fold_rmse`, `mean_rmse`,
/// `std_rmse`, `folds` and per-row `predictions`.
#[pyfunction]
#[pyo3(signature = (curves, pipeline, k=10, seed=0, scheme="shuffled", workers=None))]
fn cross_validate<'py>(
    py: Python<'py>,
    curves: Vec<PyCurve>,
    pipeline: &PyPipeline,
    k: usize,
    seed: u64,
    scheme: &str,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let options = CvOptions {
        scheme: scheme.parse::<FoldScheme>().map_err(err)?,
        legacy_global_pca: false,
        workers,
    };
    let curves = unwrap_curves(&curves);
    let r = py
        .detach(|| cross_validate_with(&curves, &pipeline.spec, k, seed, &options))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("pipeline", &r.pipeline)?;
    d.set_item("fold_rmse", &r.fold_rmse)?;
    d.set_item("mean_rmse", r.mean_rmse)?;
    d.set_item("std_rmse", r.std_rmse)?;
    d.set_item("folds", &r.folds)?;
    let preds: Vec<f64> = r.per_sample.iter().map(|s| s.pred_mpa).collect();
    d.set_item("predictions", preds)?;
    Ok(d)
}

#[pyfunction]
fn rmse(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    spt_uts::rmse(&pred, &truth).map_err(err)
}

#[pyfunction(name = "kfold_split")]
fn py_kfold_split(n: usize, k: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    kfold_split(n, k, seed).map_err(err)
}

/// Least squares with intercept: `(intercept, coefficients)`.
#[pyfunction]
fn ols(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    let m = fit_ols(&matrix(&x)?, &y).map_err(err)?;
    Ok((m.intercept, m.coefficients.clone()))
}

#[pymodule]
#[pyo3(name = "spt_uts")]
fn spt_uts_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCurve>()?;
    m.add_class::<PyPca>()?;
    m.add_class::<PyForest>()?;
    m.add_class::<PyPipeline>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(py_kfold_split, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
