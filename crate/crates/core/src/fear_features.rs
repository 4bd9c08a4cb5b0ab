//! Fear-response curves and the static per-subject features derived from them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fear_model::{FearModelError, FrEnsemble};
use crate::signal::FeatureWindow;

/// Window start times below this count toward the initial response.
pub const INITIAL_WINDOW_S: f64 = 30.0;

/// Windows needed for both the slope and the initial response.
pub const MIN_CURVE_WINDOWS: usize = 31;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("curve has {found} points, need {required}")]
    RecordTooShort { found: usize, required: usize },
    #[error(transparent)]
    Model(#[from] FearModelError),
    #[error("sex must be 0 or 1, got {0}")]
    NonBinarySex(u8),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FearCurve {
    pub subject_id: String,
    pub times_s: Vec<f64>,
    pub scores: Vec<f64>,
    pub duration_s: f64,
}

/// MKDE input row, in the fixed order `(slope, initial_fr, sex)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticFeatures {
    pub slope: f64,
    pub initial_fr: f64,
    pub sex: u8,
}

impl StaticFeatures {
    pub fn as_row(&self) -> [f64; 3] {
        [self.slope, self.initial_fr, f64::from(self.sex)]
    }
}

/// Scores each window of one record with the ensemble.
pub fn build_curve(ensemble: &FrEnsemble, windows: &[FeatureWindow]) -> Result<FearCurve, CurveError> {
    if windows.len() < MIN_CURVE_WINDOWS {
        return Err(CurveError::RecordTooShort {
            found: windows.len(),
            required: MIN_CURVE_WINDOWS,
        });
    }
    let scores = windows
        .iter()
        .map(|w| ensemble.score(w))
        .collect::<Result<Vec<_>, _>>()?;
    let times_s: Vec<f64> = windows.iter().map(|w| w.start_s).collect();
    let duration_s = times_s.last().copied().unwrap_or(0.0) + crate::signal::features::WINDOW_S as f64;
    Ok(FearCurve {
        subject_id: windows[0].subject_id.clone(),
        times_s,
        scores,
        duration_s,
    })
}

/// Least-squares slope of the scores against time rescaled so the last
/// window sits at 1.
pub fn curve_slope(curve: &FearCurve) -> Result<f64, CurveError> {
    let n = curve.scores.len();
    if n < 2 {
        return Err(CurveError::RecordTooShort { found: n, required: 2 });
    }
    let t_last = *curve.times_s.last().unwrap();
    let t: Vec<f64> = curve.times_s.iter().map(|&x| x / t_last).collect();
    let mean_t = t.iter().sum::<f64>() / n as f64;
    let mean_s = curve.scores.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (ti, si) in t.iter().zip(&curve.scores) {
        sxy += (ti - mean_t) * (si - mean_s);
        sxx += (ti - mean_t) * (ti - mean_t);
    }
    Ok(sxy / sxx)
}

/// Mean score over windows starting in the first 30 s.
pub fn initial_response(curve: &FearCurve) -> Result<f64, CurveError> {
    let early: Vec<f64> = curve
        .times_s
        .iter()
        .zip(&curve.scores)
        .filter(|(&t, _)| (0.0..INITIAL_WINDOW_S).contains(&t))
        .map(|(_, &s)| s)
        .collect();
    if early.is_empty() {
        return Err(CurveError::RecordTooShort { found: 0, required: 1 });
    }
    Ok(early.iter().sum::<f64>() / early.len() as f64)
}

pub fn assemble(curve: &FearCurve, sex: u8) -> Result<StaticFeatures, CurveError> {
    if sex > 1 {
        return Err(CurveError::NonBinarySex(sex));
    }
    Ok(StaticFeatures {
        slope: curve_slope(curve)?,
        initial_fr: initial_response(curve)?,
        sex,
    })
}

/// `subject_id,start_s,score` rows for one curve.
pub fn write_curve_csv(path: &Path, curve: &FearCurve) -> Result<(), CurveError> {
    let io = |e: csv::Error| CurveError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["subject_id", "start_s", "score"]).map_err(io)?;
    for (t, s) in curve.times_s.iter().zip(&curve.scores) {
        w.write_record([curve.subject_id.as_str(), &t.to_string(), &s.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| CurveError::Io(e.to_string()))
}

/// One row of the static-feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticRow {
    pub subject_id: String,
    pub slope: f64,
    pub initial_fr: f64,
    pub sex: u8,
    pub pclm: Option<u8>,
}

impl StaticRow {
    pub fn features(&self) -> StaticFeatures {
        StaticFeatures {
            slope: self.slope,
            initial_fr: self.initial_fr,
            sex: self.sex,
        }
    }
}

pub fn write_static_csv(path: &Path, rows: &[StaticRow]) -> Result<(), CurveError> {
    let io = |e: csv::Error| CurveError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| CurveError::Io(e.to_string()))
}

pub fn read_static_csv(path: &Path) -> Result<Vec<StaticRow>, CurveError> {
    let io = |e: csv::Error| CurveError::Io(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    r.deserialize().map(|row| row.map_err(io)).collect()
}
