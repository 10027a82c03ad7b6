//! Force–displacement curves: ingestion, uniform resampling and the
//! physical markers used by the empirical correlations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("curve has fewer than 2 valid rows")]
    EmptyCurve,
    #[error("row {row}: non-finite value")]
    NonFiniteValue { row: usize },
    #[error("invalid specimen metadata: {0}")]
    InvalidMeta(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("curve has {0} grid points, at least 5 are required")]
    TooShort(usize),
    #[error("maximum force is zero")]
    AllZero,
    #[error("marker strategy `per-curve` needs an instability displacement hint on the specimen")]
    MissingHint,
    #[error("fixed displacement {0} mm lies outside the grid")]
    OutsideGrid(f64),
}

/// Specimen metadata carried alongside every curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecimenMeta {
    pub material_id: String,
    pub temperature_c: f64,
    pub thickness_mm: f64,
    /// Ground-truth UTS, present for training data only.
    pub rm_mpa: Option<f64>,
    /// Externally known instability displacement, read by [`MarkerStrategy::PerCurve`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_i_hint_mm: Option<f64>,
}

impl SpecimenMeta {
    pub fn new(
        material_id: impl Into<String>,
        temperature_c: f64,
        thickness_mm: f64,
        rm_mpa: Option<f64>,
    ) -> Result<Self, CurveError> {
        let meta = Self {
            material_id: material_id.into(),
            temperature_c,
            thickness_mm,
            rm_mpa,
            v_i_hint_mm: None,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn with_v_i_hint(mut self, v_i_mm: f64) -> Self {
        self.v_i_hint_mm = Some(v_i_mm);
        self
    }

    pub fn validate(&self) -> Result<(), CurveError> {
        if !(self.thickness_mm.is_finite() && self.thickness_mm > 0.0) {
            return Err(CurveError::InvalidMeta(format!(
                "thickness_mm must be > 0, got {}",
                self.thickness_mm
            )));
        }
        if !(self.temperature_c >= -273.15 && self.temperature_c < 2000.0) {
            return Err(CurveError::InvalidMeta(format!(
                "temperature_C must lie in [-273.15, 2000), got {}",
                self.temperature_c
            )));
        }
        if let Some(rm) = self.rm_mpa {
            if !(rm.is_finite() && rm > 0.0) {
                return Err(CurveError::InvalidMeta(format!("rm_MPa must be > 0, got {rm}")));
            }
        }
        if let Some(v) = self.v_i_hint_mm {
            if !(v.is_finite() && v > 0.0) {
                return Err(CurveError::InvalidMeta(format!("v_i hint must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A sampled force–displacement record with strictly increasing displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCurve {
    displacement_mm: Vec<f64>,
    force_n: Vec<f64>,
    meta: SpecimenMeta,
}

impl RawCurve {
    pub fn new(
        displacement_mm: Vec<f64>,
        force_n: Vec<f64>,
        meta: SpecimenMeta,
    ) -> Result<Self, CurveError> {
        if displacement_mm.len() != force_n.len() {
            return Err(CurveError::InvalidCurve(format!(
                "{} displacements but {} forces",
                displacement_mm.len(),
                force_n.len()
            )));
        }
        if displacement_mm.len() < 2 {
            return Err(CurveError::EmptyCurve);
        }
        for (row, (&v, &f)) in displacement_mm.iter().zip(&force_n).enumerate() {
            if !v.is_finite() || !f.is_finite() {
                return Err(CurveError::NonFiniteValue { row });
            }
        }
        if displacement_mm[0] < 0.0 {
            return Err(CurveError::InvalidCurve("negative displacement".into()));
        }
        if let Some(w) = displacement_mm.windows(2).position(|w| w[1] <= w[0]) {
            return Err(CurveError::InvalidCurve(format!(
                "displacement not strictly increasing at sample {}",
                w + 1
            )));
        }
        if force_n[0] < 0.0 {
            return Err(CurveError::InvalidCurve("first force sample is negative".into()));
        }
        meta.validate()?;
        Ok(Self {
            displacement_mm,
            force_n,
            meta,
        })
    }

    pub fn displacement_mm(&self) -> &[f64] {
        &self.displacement_mm
    }

    pub fn force_n(&self) -> &[f64] {
        &self.force_n
    }

    pub fn meta(&self) -> &SpecimenMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.force_n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.force_n.is_empty()
    }

    /// Piecewise-linear force at `v`, constant beyond either end.
    pub fn force_at(&self, v: f64) -> f64 {
        interpolate(&self.displacement_mm, &self.force_n, v)
    }
}

/// Linear interpolation over strictly increasing `xs`. Returns stored
/// values bit-for-bit when `q` hits a sample exactly.
pub(crate) fn interpolate(xs: &[f64], ys: &[f64], q: f64) -> f64 {
    let last = xs.len() - 1;
    if q <= xs[0] {
        return ys[0];
    }
    if q >= xs[last] {
        return ys[last];
    }
    // first index with xs[i] > q; 1..=last here
    let hi = xs.partition_point(|&x| x <= q);
    let lo = hi - 1;
    if xs[lo] == q {
        return ys[lo];
    }
    let t = (q - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + (ys[hi] - ys[lo]) * t
}

/// Uniform displacement grid `start + i·spacing`, `i < n_points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start_mm: f64,
    pub spacing_mm: f64,
    pub n_points: usize,
}

impl Default for GridSpec {
    /// 151 points over [0, 1.5] mm.
    fn default() -> Self {
        Self {
            start_mm: 0.0,
            spacing_mm: 0.010,
            n_points: 151,
        }
    }
}

impl GridSpec {
    pub fn new(start_mm: f64, spacing_mm: f64, n_points: usize) -> Result<Self, CurveError> {
        let grid = Self {
            start_mm,
            spacing_mm,
            n_points,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid with `n_points` covering `[start_mm, end_mm]`.
    pub fn spanning(start_mm: f64, end_mm: f64, n_points: usize) -> Result<Self, CurveError> {
        if n_points < 2 {
            return Err(CurveError::InvalidGrid("n_points must be at least 2".into()));
        }
        Self::new(start_mm, (end_mm - start_mm) / (n_points - 1) as f64, n_points)
    }

    pub fn validate(&self) -> Result<(), CurveError> {
        if self.n_points == 0 {
            return Err(CurveError::InvalidGrid("n_points must be positive".into()));
        }
        if !(self.spacing_mm.is_finite() && self.spacing_mm > 0.0) {
            return Err(CurveError::InvalidGrid(format!(
                "spacing must be > 0, got {}",
                self.spacing_mm
            )));
        }
        if !self.start_mm.is_finite() {
            return Err(CurveError::InvalidGrid("start must be finite".into()));
        }
        Ok(())
    }

    pub fn point(&self, i: usize) -> f64 {
        self.start_mm + i as f64 * self.spacing_mm
    }

    pub fn end_mm(&self) -> f64 {
        self.point(self.n_points - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }
}

/// A curve sampled on a [`GridSpec`]; one row of the feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformCurve {
    grid: GridSpec,
    force_n: Vec<f64>,
    meta: SpecimenMeta,
    /// Index of the first grid point filled by constant extrapolation past
    /// the last recorded displacement, if any.
    extrapolated_from: Option<usize>,
}

impl UniformCurve {
    pub fn new(grid: GridSpec, force_n: Vec<f64>, meta: SpecimenMeta) -> Result<Self, CurveError> {
        grid.validate()?;
        if force_n.len() != grid.n_points {
            return Err(CurveError::InvalidCurve(format!(
                "{} forces for a {}-point grid",
                force_n.len(),
                grid.n_points
            )));
        }
        if let Some(row) = force_n.iter().position(|f| !f.is_finite()) {
            return Err(CurveError::NonFiniteValue { row });
        }
        meta.validate()?;
        Ok(Self {
            grid,
            force_n,
            meta,
            extrapolated_from: None,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn force_n(&self) -> &[f64] {
        &self.force_n
    }

    pub fn meta(&self) -> &SpecimenMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut SpecimenMeta {
        &mut self.meta
    }

    pub fn extrapolated_from(&self) -> Option<usize> {
        self.extrapolated_from
    }

    /// Reinterprets the grid samples as a raw record.
    pub fn to_raw(&self) -> Result<RawCurve, CurveError> {
        RawCurve::new(self.grid.points(), self.force_n.clone(), self.meta.clone())
    }

    /// Force at `v` by linear interpolation between grid points.
    pub fn force_at(&self, v: f64) -> f64 {
        interpolate(&self.grid.points(), &self.force_n, v)
    }

    /// Multiplies every force by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            force_n: self.force_n.iter().map(|f| f * c).collect(),
            ..self.clone()
        }
    }
}

/// Parses a `displacement_um,force_N` table. Displacements are converted to
/// millimetres, rows are sorted and exact-duplicate displacements collapsed
/// to their mean force.
pub fn parse_curve_csv(text: &str, meta: SpecimenMeta) -> Result<RawCurve, CurveError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CurveError::MalformedRow {
            row: 0,
            reason: e.to_string(),
        })?
        .clone();
    if headers.len() != 2 || &headers[0] != "displacement_um" || &headers[1] != "force_N" {
        return Err(CurveError::MalformedRow {
            row: 0,
            reason: "expected header `displacement_um,force_N`".into(),
        });
    }

    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // 1-based data row; the header is row 0
        let row = i + 1;
        let record = record.map_err(|e| CurveError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(CurveError::MalformedRow {
                row,
                reason: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let parse = |cell: &str| {
            cell.parse::<f64>().map_err(|_| CurveError::MalformedRow {
                row,
                reason: format!("not a number: `{cell}`"),
            })
        };
        let v_um = parse(&record[0])?;
        let f = parse(&record[1])?;
        if !v_um.is_finite() || !f.is_finite() {
            return Err(CurveError::NonFiniteValue { row });
        }
        rows.push((v_um, f));
    }

    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut displacement = Vec::with_capacity(rows.len());
    let mut force = Vec::with_capacity(rows.len());
    let mut i = 0;
    while i < rows.len() {
        let v = rows[i].0;
        let mut j = i;
        let mut sum = 0.0;
        while j < rows.len() && rows[j].0 == v {
            sum += rows[j].1;
            j += 1;
        }
        displacement.push(v / 1000.0);
        force.push(sum / (j - i) as f64);
        i = j;
    }
    if displacement.len() < 2 {
        return Err(CurveError::EmptyCurve);
    }
    RawCurve::new(displacement, force, meta)
}

/// Resamples onto `grid` by piecewise-linear interpolation. Grid points
/// before the first sample take the first force; points past the last
/// sample take the last force and are flagged via
/// [`UniformCurve::extrapolated_from`].
pub fn resample(curve: &RawCurve, grid: &GridSpec) -> Result<UniformCurve, CurveError> {
    grid.validate()?;
    let xs = curve.displacement_mm();
    let ys = curve.force_n();
    let last = *xs.last().expect("raw curve has at least two samples");
    let force = (0..grid.n_points)
        .map(|i| interpolate(xs, ys, grid.point(i)))
        .collect();
    let extrapolated_from = (0..grid.n_points).find(|&i| grid.point(i) > last);
    let mut out = UniformCurve::new(*grid, force, curve.meta().clone())?;
    out.extrapolated_from = extrapolated_from;
    Ok(out)
}

/// How the instability point (F_i, v_i) is located.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MarkerStrategy {
    /// Knee of the curve: the grid point where the slope of the width-5
    /// moving average increases most, searched from the fourth point on.
    #[default]
    MaxSlope,
    /// Caller-supplied displacement shared by all curves.
    FixedV { v_mm: f64 },
    /// Per-specimen displacement taken from [`SpecimenMeta::v_i_hint_mm`].
    PerCurve,
}


impl std::fmt::Display for MarkerStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MaxSlope => write!(f, "max-slope"),
            Self::FixedV { v_mm } => write!(f, "fixed-v={v_mm}"),
            Self::PerCurve => write!(f, "per-curve"),
        }
    }
}

impl std::str::FromStr for MarkerStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max-slope" => Ok(Self::MaxSlope),
            "per-curve" => Ok(Self::PerCurve),
            _ => {
                let v = s
                    .strip_prefix("fixed-v=")
                    .ok_or_else(|| format!("unknown marker strategy `{s}`"))?;
                let v_mm: f64 = v
                    .parse()
                    .map_err(|_| format!("bad fixed-v displacement `{v}`"))?;
                if !(v_mm.is_finite() && v_mm > 0.0) {
                    return Err(format!("fixed-v displacement must be > 0, got {v_mm}"));
                }
                Ok(Self::FixedV { v_mm })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveMarkers {
    pub f_max_n: f64,
    pub v_at_fmax_mm: f64,
    pub f_instability_n: f64,
    pub v_instability_mm: f64,
    pub strategy: MarkerStrategy,
}

const SMOOTHING_WINDOW: usize = 5;
const KNEE_SEARCH_START: usize = 3;

/// Centered moving average; the window is truncated at both ends.
fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Gains within this fraction of the maximum force count as ties; the
/// earliest tied point wins, so rounding noise cannot move the knee.
const KNEE_TIE_TOL: f64 = 1e-9;

fn knee_index(force: &[f64], f_max: f64) -> usize {
    let smooth = moving_average(force, SMOOTHING_WINDOW);
    let slope: Vec<f64> = smooth.windows(2).map(|w| w[1] - w[0]).collect();
    // slope increase at grid point j, for 1 <= j <= n-2
    let gains: Vec<f64> = (KNEE_SEARCH_START..slope.len())
        .map(|j| slope[j] - slope[j - 1])
        .collect();
    let best = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = best - KNEE_TIE_TOL * f_max;
    KNEE_SEARCH_START + gains.iter().position(|&g| g >= cutoff).unwrap_or(0)
}

pub fn extract_markers(
    curve: &UniformCurve,
    strategy: MarkerStrategy,
) -> Result<CurveMarkers, CurveError> {
    let force = curve.force_n();
    let grid = curve.grid();
    if force.len() < SMOOTHING_WINDOW {
        return Err(CurveError::TooShort(force.len()));
    }
    let (imax, f_max) = force
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, f)| if f > acc.1 { (i, f) } else { acc });
    if f_max <= 0.0 {
        return Err(CurveError::AllZero);
    }
    let v_max = grid.point(imax);

    let (v_i, f_i) = match strategy {
        MarkerStrategy::MaxSlope => {
            let j = knee_index(force, f_max);
            (grid.point(j), force[j])
        }
        MarkerStrategy::FixedV { v_mm } => fixed_readout(curve, v_mm)?,
        MarkerStrategy::PerCurve => {
            let v_mm = curve.meta().v_i_hint_mm.ok_or(CurveError::MissingHint)?;
            fixed_readout(curve, v_mm)?
        }
    };
    Ok(CurveMarkers {
        f_max_n: f_max,
        v_at_fmax_mm: v_max,
        f_instability_n: f_i,
        v_instability_mm: v_i,
        strategy,
    })
}

fn fixed_readout(curve: &UniformCurve, v_mm: f64) -> Result<(f64, f64), CurveError> {
    let grid = curve.grid();
    if !(v_mm >= grid.start_mm && v_mm <= grid.end_mm()) {
        return Err(CurveError::OutsideGrid(v_mm));
    }
    Ok((v_mm, curve.force_at(v_mm)))
}
