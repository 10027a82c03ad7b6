//! `spt-uts` command-line front end.
//!
//! Exit codes: 0 success, 2 bad flags, 3 I/O failure, 4 invalid data or
//! failed fit, 5 model/grid incompatibility.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::curve::{GridSpec, MarkerStrategy, UniformCurve};
use crate::dataset::{self, DataError, TruthRow};
use crate::eval::{cross_validate_with, rmse, CvOptions, FoldScheme, SUMMARY_HEADER};
use crate::features::column_labels;
use crate::forest::{permutation_importances, ForestConfig};
use crate::model_file::{ModelFile, ModelFileError, Provenance};
use crate::pipeline::{
    fit_pipeline, FittedModel, ForestInput, PipelineError, PipelineKind, PipelineSpec,
};
use crate::regress::EmpiricalMode;
use crate::synth::{generate, SynthConfig, SynthError};

pub const EXIT_FLAGS: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_COMPAT: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn flags(message: impl Into<String>) -> Self {
        Self { code: EXIT_FLAGS, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }

    fn compat(message: impl Into<String>) -> Self {
        Self { code: EXIT_COMPAT, message: message.into() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::Io { .. } => EXIT_IO,
            DataError::Invalid { .. } => EXIT_DATA,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "spt-uts", version, about = "Predict ultimate tensile strength from small punch test curves")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted ground truth.
    Synth(SynthArgs),
    /// k-fold cross-validation of one or more pipelines.
    Cv(CvArgs),
    /// Fit a pipeline on every row of a manifest and write a model file.
    Train(TrainArgs),
    /// Predict R_m for the curves of a manifest.
    Predict(PredictArgs),
    /// Turn a per-sample prediction CSV into plot-ready rows.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    materials: usize,
    #[arg(long = "per-material", default_value_t = 24)]
    per_material: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    h0: f64,
    #[arg(long = "noise-sigma", default_value_t = 0.0, allow_negative_numbers = true)]
    noise_sigma: f64,
    #[arg(long = "rm-min", default_value_t = 400.0)]
    rm_min: f64,
    #[arg(long = "rm-max", default_value_t = 1100.0)]
    rm_max: f64,
    #[arg(long = "vi-min", default_value_t = 0.3)]
    vi_min: f64,
    #[arg(long = "vi-max", default_value_t = 0.7)]
    vi_max: f64,
    #[arg(long = "temp-min", default_value_t = -150.0, allow_negative_numbers = true)]
    temp_min: f64,
    #[arg(long = "temp-max", default_value_t = 350.0, allow_negative_numbers = true)]
    temp_max: f64,
    #[arg(long = "temp-slope", default_value_t = -0.3, allow_negative_numbers = true)]
    temp_slope: f64,
    #[arg(long = "beta-temp-coeff", default_value_t = 0.0, allow_negative_numbers = true)]
    beta_temp_coeff: f64,
}

#[derive(Debug, Args, Clone)]
struct GridArgs {
    /// Number of grid points over the displacement window.
    #[arg(long = "grid-points")]
    grid_points: Option<usize>,
    /// Grid spacing in mm.
    #[arg(long = "grid-spacing")]
    grid_spacing: Option<f64>,
}

impl GridArgs {
    fn resolve(&self) -> CliResult<GridSpec> {
        let default = GridSpec::default();
        let grid = match (self.grid_points, self.grid_spacing) {
            (None, None) => default,
            (Some(n), None) => GridSpec::spanning(0.0, default.end_mm(), n)
                .map_err(|e| CliError::flags(format!("--grid-points: {e}")))?,
            (n, Some(s)) => GridSpec::new(0.0, s, n.unwrap_or(default.n_points))
                .map_err(|e| CliError::flags(format!("--grid-spacing: {e}")))?,
        };
        if grid.n_points < 2 {
            return Err(CliError::flags("--grid-points must be at least 2"));
        }
        Ok(grid)
    }

    fn given(&self) -> bool {
        self.grid_points.is_some() || self.grid_spacing.is_some()
    }
}

#[derive(Debug, Args, Clone)]
struct PipelineArgs {
    /// Training manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Planted-truth CSV supplying per-curve instability displacements.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Empirical correlation: instability-force or max-force.
    #[arg(long, default_value = "instability-force")]
    mode: String,
    /// Marker strategy: max-slope, fixed-v=<mm> or per-curve.
    #[arg(long, default_value = "max-slope")]
    markers: String,
    /// Cumulative explained-variance threshold for PCA.
    #[arg(long, default_value_t = 0.99)]
    threshold: f64,
    /// Skip feature standardization.
    #[arg(long = "no-standardize")]
    no_standardize: bool,
    #[arg(long, default_value_t = 200)]
    trees: usize,
    #[arg(long = "max-depth")]
    max_depth: Option<usize>,
    #[arg(long = "min-leaf", default_value_t = 2)]
    min_leaf: usize,
    #[arg(long)]
    mtry: Option<usize>,
    /// Forest input: raw or scores.
    #[arg(long = "rf-input", default_value = "raw")]
    rf_input: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct CvArgs {
    /// Pipelines to evaluate: comma-separated list of empirical, pca-lm, rf.
    #[arg(long, default_value = "empirical,pca-lm,rf")]
    pipeline: String,
    #[arg(long, default_value_t = 10, allow_negative_numbers = true)]
    k: i64,
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    /// Fit standardizer and PCA once on all rows (leaks feature statistics).
    #[arg(long = "legacy-global-pca")]
    legacy_global_pca: bool,
    /// Fold assignment: shuffled, stratified or grouped.
    #[arg(long, default_value = "shuffled")]
    folds: String,
    #[command(flatten)]
    common: PipelineArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value = "empirical")]
    pipeline: String,
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    /// Also report permutation importances for forest models.
    #[arg(long = "permutation-importance")]
    permutation_importance: bool,
    /// Timestamp recorded in the model provenance.
    #[arg(long)]
    timestamp: Option<String>,
    #[command(flatten)]
    common: PipelineArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FLAGS } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{e}")
            } else {
                write!(stderr, "{e}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a, stdout),
        Command::Cv(a) => cmd_cv(&a, stdout),
        Command::Train(a) => cmd_train(&a, stdout),
        Command::Predict(a) => cmd_predict(&a, stdout),
        Command::Report(a) => cmd_report(&a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn out_line(stdout: &mut dyn Write, line: &str) -> CliResult<()> {
    writeln!(stdout, "{line}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn cmd_synth(a: &SynthArgs, stdout: &mut dyn Write) -> CliResult<()> {
    if !(a.noise_sigma >= 0.0 && a.noise_sigma.is_finite()) {
        return Err(CliError::flags(format!("--noise-sigma must be >= 0, got {}", a.noise_sigma)));
    }
    if a.materials == 0 {
        return Err(CliError::flags("--materials must be positive"));
    }
    if a.per_material == 0 {
        return Err(CliError::flags("--per-material must be positive"));
    }
    if !(a.beta > 0.0) {
        return Err(CliError::flags(format!("--beta must be > 0, got {}", a.beta)));
    }
    if !(a.h0 > 0.0) {
        return Err(CliError::flags(format!("--h0 must be > 0, got {}", a.h0)));
    }
    let cfg = SynthConfig {
        n_materials: a.materials,
        curves_per_material: a.per_material,
        beta_true: a.beta,
        h0_mm: a.h0,
        rm_range_mpa: (a.rm_min, a.rm_max),
        v_i_range_mm: (a.vi_min, a.vi_max),
        noise_sigma_n: a.noise_sigma,
        temp_range_c: (a.temp_min, a.temp_max),
        temp_slope_mpa_per_c: a.temp_slope,
        beta_temp_coeff: a.beta_temp_coeff,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let (curves, truth) = generate(&cfg).map_err(|e| match e {
        SynthError::BadConfig(m) => CliError::flags(m),
        other => CliError::data(other.to_string()),
    })?;
    let files = dataset::write_synthetic(&a.out, &curves, &truth)?;
    out_line(
        stdout,
        &format!("wrote {} curves (seed {}) to {}", files.len(), a.seed, a.out.display()),
    )
}

fn parse_pipeline(name: &str, a: &PipelineArgs) -> CliResult<PipelineSpec> {
    if !(a.threshold > 0.0 && a.threshold <= 1.0) {
        return Err(CliError::flags(format!("--threshold must lie in (0, 1], got {}", a.threshold)));
    }
    let mut spec = match name {
        "empirical" => {
            let mode: EmpiricalMode = a.mode.parse().map_err(|e| CliError::flags(format!("--mode: {e}")))?;
            let markers: MarkerStrategy =
                a.markers.parse().map_err(|e| CliError::flags(format!("--markers: {e}")))?;
            if markers == MarkerStrategy::PerCurve && a.truth.is_none() {
                return Err(CliError::flags("--markers per-curve requires --truth"));
            }
            PipelineSpec::empirical(mode, markers)
        }
        "pca-lm" => PipelineSpec::pca_lm(a.threshold),
        "rf" => {
            if a.trees == 0 {
                return Err(CliError::flags("--trees must be positive"));
            }
            if a.min_leaf == 0 {
                return Err(CliError::flags("--min-leaf must be at least 1"));
            }
            let input = match a.rf_input.as_str() {
                "raw" => ForestInput::Raw,
                "scores" => ForestInput::Scores { variance_threshold: a.threshold },
                other => return Err(CliError::flags(format!("--rf-input: unknown value `{other}`"))),
            };
            PipelineSpec {
                kind: PipelineKind::Forest {
                    config: ForestConfig {
                        n_trees: a.trees,
                        max_depth: a.max_depth,
                        min_leaf: a.min_leaf,
                        mtry: a.mtry,
                        seed: a.seed,
                        bootstrap: true,
                    },
                    input,
                },
                standardize: true,
            }
        }
        other => return Err(CliError::flags(format!("--pipeline: unknown pipeline `{other}`"))),
    };
    spec.standardize = !a.no_standardize;
    Ok(spec)
}

fn load_truth(path: Option<&PathBuf>) -> CliResult<Option<HashMap<String, TruthRow>>> {
    Ok(match path {
        Some(p) => Some(dataset::read_truth(p)?),
        None => None,
    })
}

fn load_labeled(a: &PipelineArgs, grid: &GridSpec) -> CliResult<(Vec<String>, Vec<UniformCurve>)> {
    let truth = load_truth(a.truth.as_ref())?;
    let rows = dataset::load_curves(&a.manifest, grid, truth.as_ref())?;
    if let Some((i, (r, _))) = rows.iter().enumerate().find(|(_, (r, _))| r.meta.rm_mpa.is_none()) {
        return Err(CliError::data(format!(
            "{}, row {}: `{}` has no rm_MPa",
            a.manifest.display(),
            i + 1,
            r.file
        )));
    }
    Ok(rows.into_iter().map(|(r, c)| (r.file, c)).unzip())
}

fn pipeline_error(manifest: &Path, files: &[String], e: PipelineError) -> CliError {
    match e {
        PipelineError::Curve { index, source } => CliError::data(format!(
            "{}, row {}: {}: {source}",
            manifest.display(),
            index + 1,
            files.get(index).map(String::as_str).unwrap_or("?")
        )),
        PipelineError::GridMismatch { .. } => CliError::compat(e.to_string()),
        other => CliError::data(format!("{}: {other}", manifest.display())),
    }
}

fn cmd_cv(a: &CvArgs, stdout: &mut dyn Write) -> CliResult<()> {
    if a.k < 2 {
        return Err(CliError::flags(format!("--k must be at least 2, got {}", a.k)));
    }
    let k = a.k as usize;
    let scheme: FoldScheme = a.folds.parse().map_err(|e| CliError::flags(format!("--folds: {e}")))?;
    let specs = a
        .pipeline
        .split(',')
        .map(|name| parse_pipeline(name.trim(), &a.common))
        .collect::<CliResult<Vec<_>>>()?;
    let grid = a.common.grid.resolve()?;
    let (files, curves) = load_labeled(&a.common, &grid)?;
    if k > curves.len() {
        return Err(CliError::flags(format!("--k = {k} exceeds the {} labeled curves", curves.len())));
    }
    let options = CvOptions {
        scheme,
        legacy_global_pca: a.legacy_global_pca,
        workers: None,
    };

    let mut summary = format!("{SUMMARY_HEADER}\n");
    out_line(stdout, SUMMARY_HEADER)?;
    for spec in &specs {
        let report = cross_validate_with(&curves, spec, k, a.common.seed, &options).map_err(|e| match e {
            crate::eval::EvalError::Fold { fold, source } => {
                let inner = pipeline_error(&a.common.manifest, &files, source);
                CliError { code: inner.code, message: format!("fold {fold}: {}", inner.message) }
            }
            other => CliError::data(other.to_string()),
        })?;
        let mut folds = Vec::new();
        let mut samples = Vec::new();
        report
            .write_folds_csv(&mut folds)
            .and_then(|_| report.write_samples_csv(&mut samples))
            .map_err(|e| CliError::io(&a.out, std::io::Error::other(e)))?;
        write_file(&a.out.join(format!("{}_folds.csv", report.pipeline)), &folds)?;
        write_file(&a.out.join(format!("{}_samples.csv", report.pipeline)), &samples)?;
        let line = report.summary_line();
        out_line(stdout, &line)?;
        summary.push_str(&line);
        summary.push('\n');
    }
    write_file(&a.out.join("summary.csv"), summary.as_bytes())
}

fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let spec = parse_pipeline(&a.pipeline, &a.common)?;
    let grid = a.common.grid.resolve()?;
    let (files, curves) = load_labeled(&a.common, &grid)?;
    let trained =
        fit_pipeline(&curves, &spec).map_err(|e| pipeline_error(&a.common.manifest, &files, e))?;
    let pred = trained
        .predict(&curves)
        .map_err(|e| pipeline_error(&a.common.manifest, &files, e))?;
    let truth: Vec<f64> = curves.iter().filter_map(|c| c.meta().rm_mpa).collect();
    let train_rmse = rmse(&pred, &truth).map_err(|e| CliError::data(e.to_string()))?;

    out_line(stdout, &format!("pipeline={}", spec.name()))?;
    out_line(stdout, &format!("training_rmse_MPa={train_rmse}"))?;
    if let Some(pca) = &trained.pca {
        out_line(stdout, &format!("components={}", pca.n_components()))?;
        out_line(stdout, &format!("cumulative_explained={}", pca.cumulative_explained()))?;
    }
    match &trained.model {
        FittedModel::Empirical(m) => out_line(stdout, &format!("beta={}", m.beta))?,
        FittedModel::Linear(_) => {}
        FittedModel::Forest(rf) => {
            if let Some(oob) = rf.oob_rmse {
                out_line(stdout, &format!("oob_rmse_MPa={oob}"))?;
            }
            let labels: Vec<String> = match &trained.pca {
                Some(p) => (0..p.n_components()).map(|j| format!("PC{}", j + 1)).collect(),
                None => column_labels(&grid),
            };
            for (label, v) in top(&labels, &rf.importances, 5) {
                out_line(stdout, &format!("importance {label}={v}"))?;
            }
            if a.permutation_importance {
                let (m, _) = crate::features::assemble(&curves).map_err(|e| CliError::data(e.to_string()))?;
                let design = trained
                    .preprocessing()
                    .apply(&m)
                    .map_err(|e| CliError::data(e.to_string()))?;
                let imp = permutation_importances(rf, &design, &truth, a.common.seed)
                    .map_err(|e| CliError::data(e.to_string()))?;
                for (label, v) in top(&labels, &imp, 5) {
                    out_line(stdout, &format!("permutation_importance {label}={v}"))?;
                }
            }
        }
    }

    let manifest_bytes = fs::read(&a.common.manifest).map_err(|e| CliError::io(&a.common.manifest, e))?;
    let mut provenance = Provenance::new(a.common.seed, &manifest_bytes);
    provenance.timestamp = a.timestamp.clone();
    let file = ModelFile::new(trained, provenance);
    write_file(&a.out, file.to_json().as_bytes())
}

fn top<'a>(labels: &'a [String], values: &[f64], n: usize) -> Vec<(&'a str, f64)> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    idx.into_iter().take(n).map(|i| (labels[i].as_str(), values[i])).collect()
}

fn cmd_predict(a: &PredictArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let text = fs::read_to_string(&a.model).map_err(|e| CliError::io(&a.model, e))?;
    let file = ModelFile::from_json(&text).map_err(|e| match e {
        ModelFileError::UnknownVersion(_) | ModelFileError::MissingVersion => {
            CliError::compat(format!("{}: {e}", a.model.display()))
        }
        other => CliError::data(format!("{}: {other}", a.model.display())),
    })?;
    let model_grid = file.grid;
    if a.grid.given() {
        let grid = a.grid.resolve()?;
        if grid != model_grid {
            return Err(CliError::compat(format!(
                "{}: curves resampled to {} points but the model expects {}",
                a.model.display(),
                grid.n_points,
                model_grid.n_points
            )));
        }
    }
    let truth = load_truth(a.truth.as_ref())?;
    let rows = dataset::load_curves(&a.manifest, &model_grid, truth.as_ref())?;
    let trained = file.into_trained();
    let (meta, curves): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let files: Vec<String> = meta.iter().map(|r| r.file.clone()).collect();
    let pred = trained
        .predict(&curves)
        .map_err(|e| pipeline_error(&a.manifest, &files, e))?;

    let mut out = String::from("file,material_id,temperature_C,pred_rm_MPa\n");
    for (r, p) in meta.iter().zip(&pred) {
        out.push_str(&format!("{},{},{},{}\n", r.file, r.meta.material_id, r.meta.temperature_c, p));
    }
    write_file(&a.out, out.as_bytes())?;
    out_line(stdout, &format!("predicted {} curves", pred.len()))
}

fn cmd_report(a: &ReportArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let text = fs::read_to_string(&a.input).map_err(|e| CliError::io(&a.input, e))?;
    let bad = |row: usize, m: String| CliError::data(format!("{}, row {row}: {m}", a.input.display()));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(0, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(0, format!("missing column `{name}`")))
    };
    let (ti, pi) = (col("true_MPa")?, col("pred_MPa")?);
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| bad(row, e.to_string()))?;
        let get = |j: usize| -> CliResult<f64> {
            let cell = rec.get(j).unwrap_or("");
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(row, format!("not a finite number: `{cell}`")))
        };
        pairs.push((get(ti)?, get(pi)?));
    }
    if pairs.is_empty() {
        return Err(bad(0, "no rows".into()));
    }
    let truth: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let pred: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let score = rmse(&pred, &truth).map_err(|e| CliError::data(e.to_string()))?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut out = String::from("true_MPa,pred_MPa,abs_err_MPa\n");
    for (t, p) in &pairs {
        out.push_str(&format!("{t},{p},{}\n", (p - t).abs()));
    }
    out.push_str(&format!("# rmse_MPa={score}\n"));
    write_file(&a.out, out.as_bytes())?;
    out_line(stdout, &format!("rmse_MPa={score}"))
}
