//! On-disk dataset layout: one `displacement_um,force_N` CSV per curve, a
//! manifest `file,material_id,temperature_C,thickness_mm,rm_MPa`, and for
//! synthetic data a `truth.csv` with `file,rm_MPa,v_i_mm,f_i_N`.
//! Paths in the manifest are relative to the manifest's directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::curve::{parse_curve_csv, resample, CurveError, GridSpec, RawCurve, SpecimenMeta, UniformCurve};
use crate::synth::{SynthTruth, SAMPLE_STEP_UM};

pub const MANIFEST_HEADER: [&str; 5] = ["file", "material_id", "temperature_C", "thickness_mm", "rm_MPa"];
pub const TRUTH_HEADER: [&str; 4] = ["file", "rm_MPa", "v_i_mm", "f_i_N"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}, row {row}: {message}", file.display())]
    Invalid { file: PathBuf, row: usize, message: String },
}

impl DataError {
    fn invalid(file: &Path, row: usize, message: impl Into<String>) -> Self {
        Self::Invalid {
            file: file.to_path_buf(),
            row,
            message: message.into(),
        }
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), DataError> {
    fs::write(path, contents).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub file: String,
    pub meta: SpecimenMeta,
}

fn csv_records(path: &Path, text: &str, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| DataError::invalid(path, 0, e.to_string()))?
        .clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(DataError::invalid(path, 0, format!("expected header `{}`", header.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| DataError::invalid(path, row, e.to_string()))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            return Err(DataError::invalid(
                path,
                row,
                format!("expected {} columns, found {}", header.len(), rec.len()),
            ));
        }
        out.push((row, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn number(path: &Path, row: usize, column: &str, cell: &str) -> Result<f64, DataError> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::invalid(path, row, format!("{column}: not a finite number: `{cell}`")))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, DataError> {
    let text = read(path)?;
    csv_records(path, &text, &MANIFEST_HEADER)?
        .into_iter()
        .map(|(row, cells)| {
            let temperature = number(path, row, "temperature_C", &cells[2])?;
            let thickness = number(path, row, "thickness_mm", &cells[3])?;
            let rm = if cells[4].is_empty() {
                None
            } else {
                Some(number(path, row, "rm_MPa", &cells[4])?)
            };
            let meta = SpecimenMeta::new(cells[1].clone(), temperature, thickness, rm)
                .map_err(|e| DataError::invalid(path, row, e.to_string()))?;
            Ok(ManifestRow {
                file: cells[0].clone(),
                meta,
            })
        })
        .collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), DataError> {
    let mut out = MANIFEST_HEADER.join(",");
    out.push('\n');
    for r in rows {
        let rm = r.meta.rm_mpa.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.file, r.meta.material_id, r.meta.temperature_c, r.meta.thickness_mm, rm
        ));
    }
    write(path, &out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub rm_mpa: f64,
    pub v_i_mm: f64,
    pub f_i_n: f64,
}

pub fn read_truth(path: &Path) -> Result<HashMap<String, TruthRow>, DataError> {
    let text = read(path)?;
    csv_records(path, &text, &TRUTH_HEADER)?
        .into_iter()
        .map(|(row, cells)| {
            Ok((
                cells[0].clone(),
                TruthRow {
                    rm_mpa: number(path, row, "rm_MPa", &cells[1])?,
                    v_i_mm: number(path, row, "v_i_mm", &cells[2])?,
                    f_i_n: number(path, row, "f_i_N", &cells[3])?,
                },
            ))
        })
        .collect()
}

/// Loads a manifest and its curves, parsed and resampled onto `grid`. When
/// `truth` is given, each specimen receives the planted `v_i` as its
/// instability hint.
pub fn load_curves(
    manifest: &Path,
    grid: &GridSpec,
    truth: Option<&HashMap<String, TruthRow>>,
) -> Result<Vec<(ManifestRow, UniformCurve)>, DataError> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .enumerate()
        .map(|(i, mut row)| {
            if let Some(t) = truth {
                let rec = t.get(&row.file).ok_or_else(|| {
                    DataError::invalid(manifest, i + 1, format!("`{}` missing from truth file", row.file))
                })?;
                row.meta = row.meta.with_v_i_hint(rec.v_i_mm);
            }
            let path = dir.join(&row.file);
            let text = read(&path)?;
            let raw = parse_curve_csv(&text, row.meta.clone()).map_err(|e| curve_error(&path, e))?;
            let uniform = resample(&raw, grid).map_err(|e| curve_error(&path, e))?;
            Ok((row, uniform))
        })
        .collect()
}

fn curve_error(path: &Path, e: CurveError) -> DataError {
    let row = match e {
        CurveError::MalformedRow { row, .. } | CurveError::NonFiniteValue { row } => row,
        _ => 0,
    };
    DataError::invalid(path, row, e.to_string())
}

/// Curve CSV text; displacements are written in whole micrometres.
pub fn curve_csv(curve: &RawCurve) -> String {
    let mut out = String::from("displacement_um,force_N\n");
    for (v, f) in curve.displacement_mm().iter().zip(curve.force_n()) {
        let um = (v * 1000.0 / f64::from(SAMPLE_STEP_UM)).round() * f64::from(SAMPLE_STEP_UM);
        out.push_str(&format!("{um},{f}\n"));
    }
    out
}

pub fn curve_file_name(index: usize) -> String {
    format!("curve_{:04}.csv", index + 1)
}

/// Writes curves, `manifest.csv` and `truth.csv` into `dir`.
pub fn write_synthetic(dir: &Path, curves: &[RawCurve], truth: &SynthTruth) -> Result<Vec<String>, DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::with_capacity(curves.len());
    let mut truth_csv = TRUTH_HEADER.join(",");
    truth_csv.push('\n');
    for (i, (curve, rec)) in curves.iter().zip(&truth.records).enumerate() {
        let file = curve_file_name(i);
        write(&dir.join(&file), &curve_csv(curve))?;
        let mut meta = curve.meta().clone();
        meta.v_i_hint_mm = None;
        truth_csv.push_str(&format!("{},{},{},{}\n", file, rec.rm_mpa, rec.v_i_mm, rec.f_i_n));
        rows.push(ManifestRow { file, meta });
    }
    write_manifest(&dir.join("manifest.csv"), &rows)?;
    write(&dir.join("truth.csv"), &truth_csv)?;
    Ok(rows.into_iter().map(|r| r.file).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_materials: 2,
            curves_per_material: 3,
            noise_sigma_n: 1.5,
            ..Default::default()
        };
        let (curves, truth) = generate(&cfg).unwrap();
        let files = write_synthetic(dir.path(), &curves, &truth).unwrap();
        assert_eq!(files.len(), 6);

        let t = read_truth(&dir.path().join("truth.csv")).unwrap();
        let loaded = load_curves(&dir.path().join("manifest.csv"), &GridSpec::default(), Some(&t)).unwrap();
        assert_eq!(loaded.len(), 6);
        for ((row, uniform), raw) in loaded.iter().zip(&curves) {
            assert_eq!(row.meta.rm_mpa, raw.meta().rm_mpa);
            assert_eq!(row.meta.temperature_c, raw.meta().temperature_c);
            assert_eq!(uniform.meta().v_i_hint_mm, raw.meta().v_i_hint_mm);
            let direct = resample(raw, &GridSpec::default()).unwrap();
            assert_eq!(direct.force_n(), uniform.force_n());
        }
    }

    #[test]
    fn manifest_errors_name_file_and_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        fs::write(&path, "file,material_id,temperature_C,thickness_mm,rm_MPa\na.csv,P91,hot,0.5,\n").unwrap();
        let err = read_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("manifest.csv") && err.contains("row 1"), "{err}");

        fs::write(&path, "file,material_id,temperature_C,thickness_mm,rm_MPa\na.csv,P91,20,0.5,\n").unwrap();
        let rows = read_manifest(&path).unwrap();
        assert_eq!(rows[0].meta.rm_mpa, None);
        let err = load_curves(&path, &GridSpec::default(), None).unwrap_err();
        assert!(matches!(err, DataError::Io { .. }));

        fs::write(dir.path().join("a.csv"), "displacement_um,force_N\n0,0\n10,x\n").unwrap();
        let err = load_curves(&path, &GridSpec::default(), None).unwrap_err().to_string();
        assert!(err.contains("a.csv") && err.contains("row 2"), "{err}");
    }
}
