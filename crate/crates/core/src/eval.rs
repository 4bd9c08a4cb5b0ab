//! Leave-one-out evaluation of the PCL-M estimator against two baselines.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fear_features::StaticRow;
use crate::mkde::{self, sigma_grid, to_binary, to_pclm, MkdeError, MkdeModel, PclmDensity, STATIC_KINDS};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need at least 3 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("subject {0} has no PCL-M label")]
    MissingLabel(String),
    #[error("length mismatch: {truth} true values, {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("empty input")]
    Empty,
    #[error("subject {id}: {source}")]
    Fit { id: String, source: MkdeError },
    #[error(transparent)]
    Mkde(#[from] MkdeError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    #[default]
    Mean,
    Mode,
}

impl std::str::FromStr for BaselineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "mode" => Ok(Self::Mode),
            other => Err(format!("unknown baseline mode '{other}' (expected mean or mode)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub sigma_steps: usize,
    pub baseline: BaselineMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sigma_steps: mkde::DEFAULT_SIGMA_STEPS,
            baseline: BaselineMode::Mean,
        }
    }
}

/// A labeled row of the static-feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSubject {
    pub id: String,
    pub x: [f64; 3],
    pub sex: u8,
    pub pclm: u8,
}

impl LabeledSubject {
    pub fn from_static(row: &StaticRow) -> Result<Self, EvalError> {
        let pclm = row.pclm.ok_or_else(|| EvalError::MissingLabel(row.subject_id.clone()))?;
        Ok(Self {
            id: row.subject_id.clone(),
            x: row.features().as_row(),
            sex: row.sex,
            pclm,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(truth: &[u8], pred: &[u8]) -> Result<Self, EvalError> {
        check_lengths(truth, pred)?;
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(pred) {
            match (to_binary(t.into())?.is_ptsd(), to_binary(p.into())?.is_ptsd()) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let io = |e: csv::Error| EvalError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["", "pred_ptsd", "pred_no_ptsd"]).map_err(io)?;
        w.write_record(["true_ptsd", &self.tp.to_string(), &self.fn_.to_string()])
            .map_err(io)?;
        w.write_record(["true_no_ptsd", &self.fp.to_string(), &self.tn.to_string()])
            .map_err(io)?;
        w.flush().map_err(|e| EvalError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mape_percent: f64,
    pub binary_accuracy: f64,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn compute(truth: &[u8], pred: &[u8]) -> Result<Self, EvalError> {
        let (mae, mape_percent) = metrics(truth, pred)?;
        let confusion = Confusion::from_pairs(truth, pred)?;
        Ok(Self {
            mae,
            mape_percent,
            binary_accuracy: confusion.accuracy(),
            confusion,
        })
    }
}

fn check_lengths(truth: &[u8], pred: &[u8]) -> Result<(), EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Mean absolute error and mean absolute percentage error.
pub fn metrics(truth: &[u8], pred: &[u8]) -> Result<(f64, f64), EvalError> {
    check_lengths(truth, pred)?;
    let n = truth.len() as f64;
    let (mut abs, mut pct) = (0.0, 0.0);
    for (&t, &p) in truth.iter().zip(pred) {
        let e = (f64::from(p) - f64::from(t)).abs();
        abs += e;
        pct += e / f64::from(t);
    }
    Ok((abs / n, 100.0 * pct / n))
}

/// Training-label summary rounded to an integer score. The mean is rounded
/// half-to-even; the mode breaks ties toward the smallest value.
pub fn constant_baseline(train_labels: &[u8], mode: BaselineMode) -> Result<u8, EvalError> {
    if train_labels.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(match mode {
        BaselineMode::Mean => {
            let mean = train_labels.iter().map(|&v| f64::from(v)).sum::<f64>() / train_labels.len() as f64;
            mean.round_ties_even() as u8
        }
        BaselineMode::Mode => {
            let mut counts = BTreeMap::new();
            for &v in train_labels {
                *counts.entry(v).or_insert(0usize) += 1;
            }
            let mut best = (0u8, 0usize);
            for (v, c) in counts {
                if c > best.1 {
                    best = (v, c);
                }
            }
            best.0
        }
    })
}

/// Same-sex summary of the training labels, falling back to the whole
/// training set when no training subject shares the query's sex.
pub fn sex_baseline(train_labels: &[u8], train_sex: &[u8], query_sex: u8, mode: BaselineMode) -> Result<u8, EvalError> {
    if train_labels.len() != train_sex.len() {
        return Err(EvalError::LengthMismatch {
            truth: train_labels.len(),
            pred: train_sex.len(),
        });
    }
    let same: Vec<u8> = train_labels
        .iter()
        .zip(train_sex)
        .filter(|(_, &s)| s == query_sex)
        .map(|(&l, _)| l)
        .collect();
    if same.is_empty() {
        constant_baseline(train_labels, mode)
    } else {
        constant_baseline(&same, mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub id: String,
    pub true_pclm: u8,
    pub predicted_pclm: u8,
    pub true_ptsd: bool,
    pub predicted_ptsd: bool,
    pub sigma: f64,
    pub train_size: usize,
    pub constant_baseline: u8,
    pub sex_baseline: u8,
    pub density: PclmDensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_subjects: usize,
    pub baseline_mode: BaselineMode,
    pub spiderp: Metrics,
    pub constant_baseline: Metrics,
    pub sex_baseline: Metrics,
    pub subjects: Vec<SubjectResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn evaluate_one(subjects: &[LabeledSubject], held_out: usize, config: &EvalConfig) -> Result<SubjectResult, EvalError> {
    let train: Vec<&LabeledSubject> = subjects
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != held_out)
        .map(|(_, s)| s)
        .collect();
    let x: Vec<Vec<f64>> = train.iter().map(|s| s.x.to_vec()).collect();
    let y: Vec<f64> = train.iter().map(|s| f64::from(s.pclm)).collect();
    let labels: Vec<u8> = train.iter().map(|s| s.pclm).collect();
    let sexes: Vec<u8> = train.iter().map(|s| s.sex).collect();
    let query = &subjects[held_out];
    let fit_err = |source| EvalError::Fit {
        id: query.id.clone(),
        source,
    };

    let model = MkdeModel::fit_with_grid(&x, &y, &STATIC_KINDS, &sigma_grid(config.sigma_steps)).map_err(fit_err)?;
    let density = model.predict_density(&query.x).map_err(fit_err)?;
    let predicted_pclm = to_pclm(&density);
    Ok(SubjectResult {
        id: query.id.clone(),
        true_pclm: query.pclm,
        predicted_pclm,
        true_ptsd: to_binary(query.pclm.into())?.is_ptsd(),
        predicted_ptsd: to_binary(predicted_pclm.into())?.is_ptsd(),
        sigma: model.sigma,
        train_size: train.len(),
        constant_baseline: constant_baseline(&labels, config.baseline)?,
        sex_baseline: sex_baseline(&labels, &sexes, query.sex, config.baseline)?,
        density,
    })
}

/// Fits one model per held-out subject on the remaining subjects.
pub fn loo_evaluate(subjects: &[LabeledSubject], config: &EvalConfig) -> Result<EvalReport, EvalError> {
    if subjects.len() < 3 {
        return Err(EvalError::TooFewSubjects(subjects.len()));
    }
    let results = (0..subjects.len())
        .into_par_iter()
        .map(|i| evaluate_one(subjects, i, config))
        .collect::<Result<Vec<_>, _>>()?;
    let truth: Vec<u8> = results.iter().map(|r| r.true_pclm).collect();
    let pick = |f: fn(&SubjectResult) -> u8| results.iter().map(f).collect::<Vec<u8>>();
    Ok(EvalReport {
        n_subjects: results.len(),
        baseline_mode: config.baseline,
        spiderp: Metrics::compute(&truth, &pick(|r| r.predicted_pclm))?,
        constant_baseline: Metrics::compute(&truth, &pick(|r| r.constant_baseline))?,
        sex_baseline: Metrics::compute(&truth, &pick(|r| r.sex_baseline))?,
        subjects: results,
    })
}
