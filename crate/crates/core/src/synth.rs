//! Synthetic SPT datasets with planted ground truth.
//!
//! Each curve follows the dimensionless template
//! `F(v) = F_i·g(v/v_i)` with `g(u) = tanh(2u)/tanh(2)` up to the knee and
//! `g(u) = 1 + 0.6·(u − 1)` after it. The template is not a physical model;
//! it only provides a knee at `v_i` and a maximum force at the end of the
//! 1.5 mm window. `F_i` is planted by inverting `R_m = β·F_i / h0²`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{CurveError, RawCurve, SpecimenMeta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("bad synthetic configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Raw sampling step and window of generated curves, in micrometres.
pub const SAMPLE_STEP_UM: u32 = 1;
pub const WINDOW_UM: u32 = 1500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_materials: usize,
    pub curves_per_material: usize,
    pub beta_true: f64,
    pub h0_mm: f64,
    pub rm_range_mpa: (f64, f64),
    pub v_i_range_mm: (f64, f64),
    /// Planted `v_i` values are rounded to this many micrometres so they fall
    /// on the default 10 µm feature grid.
    pub v_i_quantum_um: u32,
    pub noise_sigma_n: f64,
    pub temp_range_c: (f64, f64),
    pub temp_slope_mpa_per_c: f64,
    /// Relative change of the effective β per °C away from the temperature
    /// midpoint. Zero keeps one global β; nonzero makes the force/strength
    /// relation temperature dependent.
    pub beta_temp_coeff: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_materials: 5,
            curves_per_material: 24,
            beta_true: 0.3,
            h0_mm: 0.5,
            rm_range_mpa: (400.0, 1100.0),
            v_i_range_mm: (0.3, 0.7),
            v_i_quantum_um: 10,
            noise_sigma_n: 0.0,
            temp_range_c: (-150.0, 350.0),
            temp_slope_mpa_per_c: -0.3,
            beta_temp_coeff: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadConfig(m));
        if self.n_materials == 0 || self.curves_per_material == 0 {
            return bad("material and per-material counts must be positive".into());
        }
        if !(self.beta_true > 0.0 && self.beta_true.is_finite()) {
            return bad(format!("beta_true must be > 0, got {}", self.beta_true));
        }
        if !(self.h0_mm > 0.0 && self.h0_mm.is_finite()) {
            return bad(format!("h0 must be > 0, got {}", self.h0_mm));
        }
        let (lo, hi) = self.rm_range_mpa;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("rm range [{lo}, {hi}] must be non-empty and positive"));
        }
        let (lo, hi) = self.v_i_range_mm;
        if !(lo > 0.1 && lo <= hi && hi < 1.0) {
            return bad(format!("v_i range [{lo}, {hi}] must lie inside (0.1, 1.0)"));
        }
        if self.v_i_quantum_um == 0 {
            return bad("v_i quantum must be positive".into());
        }
        if !(self.noise_sigma_n >= 0.0 && self.noise_sigma_n.is_finite()) {
            return bad(format!("noise sigma must be >= 0, got {}", self.noise_sigma_n));
        }
        let (lo, hi) = self.temp_range_c;
        if !(lo >= -273.15 && lo <= hi && hi < 2000.0) {
            return bad(format!("temperature range [{lo}, {hi}] is invalid"));
        }
        if !(self.temp_slope_mpa_per_c <= 0.0) {
            return bad(format!(
                "temperature slope must be <= 0, got {}",
                self.temp_slope_mpa_per_c
            ));
        }
        if !self.beta_temp_coeff.is_finite() {
            return bad("beta temperature coefficient must be finite".into());
        }
        Ok(())
    }

    pub fn n_curves(&self) -> usize {
        self.n_materials * self.curves_per_material
    }

    fn temp_midpoint(&self) -> f64 {
        0.5 * (self.temp_range_c.0 + self.temp_range_c.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub rm_mpa: f64,
    pub v_i_mm: f64,
    pub f_i_n: f64,
    pub temperature_c: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthTruth {
    pub records: Vec<TruthRecord>,
}

/// Dimensionless curve template.
pub fn template(u: f64) -> f64 {
    if u <= 1.0 {
        (2.0 * u).tanh() / 2f64.tanh()
    } else {
        1.0 + 0.6 * (u - 1.0)
    }
}

pub fn material_id(m: usize) -> String {
    format!("M{:02}", m + 1)
}

/// Generates `n_materials × curves_per_material` curves in material-major
/// order together with their planted truth.
pub fn generate(cfg: &SynthConfig) -> Result<(Vec<RawCurve>, SynthTruth), SynthError> {
    cfg.validate()?;
    let mut params = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mid = cfg.temp_midpoint();
    let quantum = f64::from(cfg.v_i_quantum_um);

    let mut curves = Vec::with_capacity(cfg.n_curves());
    let mut truth = SynthTruth::default();
    for m in 0..cfg.n_materials {
        let base_rm = params.random_range(cfg.rm_range_mpa.0..=cfg.rm_range_mpa.1);
        let v_raw_um = 1000.0 * params.random_range(cfg.v_i_range_mm.0..=cfg.v_i_range_mm.1);
        let v_i_um = ((v_raw_um / quantum).round() * quantum) as u32;
        let v_i_mm = f64::from(v_i_um) / 1000.0;

        for _ in 0..cfg.curves_per_material {
            let temperature = params.random_range(cfg.temp_range_c.0..=cfg.temp_range_c.1);
            let rm = base_rm + cfg.temp_slope_mpa_per_c * (temperature - mid);
            if rm <= 0.0 {
                return Err(SynthError::BadConfig(format!(
                    "temperature slope drives R_m to {rm} MPa at {temperature} °C"
                )));
            }
            let beta = cfg.beta_true * (1.0 + cfg.beta_temp_coeff * (temperature - mid));
            if beta <= 0.0 {
                return Err(SynthError::BadConfig(format!(
                    "beta temperature coefficient drives β to {beta} at {temperature} °C"
                )));
            }
            let f_i = rm * cfg.h0_mm * cfg.h0_mm / beta;

            let index = curves.len();
            let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed);
            noise.set_stream(1 + index as u64);
            let samples = WINDOW_UM / SAMPLE_STEP_UM + 1;
            let mut displacement = Vec::with_capacity(samples as usize);
            let mut force = Vec::with_capacity(samples as usize);
            for s in 0..samples {
                let um = s * SAMPLE_STEP_UM;
                let eps: f64 = noise.sample(StandardNormal);
                let clean = f_i * template(f64::from(um) / f64::from(v_i_um));
                displacement.push(f64::from(um) / 1000.0);
                force.push((clean + cfg.noise_sigma_n * eps).max(0.0));
            }
            let meta = SpecimenMeta::new(material_id(m), temperature, cfg.h0_mm, Some(rm))?
                .with_v_i_hint(v_i_mm);
            curves.push(RawCurve::new(displacement, force, meta)?);
            truth.records.push(TruthRecord {
                rm_mpa: rm,
                v_i_mm,
                f_i_n: f_i,
                temperature_c: temperature,
            });
        }
    }
    Ok((curves, truth))
}
