//! Pipeline stages over a manifest and the configuration shared by them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{loo_evaluate, BaselineMode, EvalConfig, EvalError, EvalReport, LabeledSubject};
use crate::fear_features::{assemble, build_curve, write_curve_csv, write_static_csv, CurveError, FearCurve, StaticRow};
use crate::fear_model::{train_ensemble, FearModelError, FrEnsemble, MlpConfig, TrainedEnsemble, DEFAULT_K};
use crate::mkde::{MkdeError, DEFAULT_SIGMA_STEPS};
use crate::signal::{process_record, FeatureWindow, Manifest, ManifestEntry, Role, SignalError, DEFAULT_GRID_HZ};
use crate::signal::features::FEATURE_NAMES;
use crate::synth::{SynthConfig, SynthError};

pub const REPORT_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const STATIC_FILE: &str = "static_features.csv";
pub const DENSITY_DIR: &str = "densities";
pub const CURVE_DIR: &str = "curves";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("subject {id}: {source}")]
    Subject { id: String, source: SignalError },
    #[error("subject {id}: {source}")]
    Curve { id: String, source: CurveError },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Model(#[from] FearModelError),
    #[error(transparent)]
    Curves(#[from] CurveError),
    #[error(transparent)]
    Mkde(#[from] MkdeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("manifest has no {0} subjects")]
    NoSubjects(&'static str),
    #[error("{0}")]
    Io(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub grid_hz: u32,
    pub k: usize,
    pub sigma_steps: usize,
    pub baseline: BaselineMode,
    pub mlp: MlpConfig,
    pub synth: SynthConfig,
    pub paths: PathConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid_hz: DEFAULT_GRID_HZ,
            k: DEFAULT_K,
            sigma_steps: DEFAULT_SIGMA_STEPS,
            baseline: BaselineMode::Mean,
            mlp: MlpConfig::default(),
            synth: SynthConfig::default(),
            paths: PathConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.grid_hz == 0 {
            return Err(PipelineError::Config("grid_hz must be positive".into()));
        }
        if self.k < 2 {
            return Err(PipelineError::Config("k must be at least 2".into()));
        }
        if self.sigma_steps == 0 {
            return Err(PipelineError::Config("sigma_steps must be positive".into()));
        }
        self.mlp.validate()?;
        self.synth.validate()?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, PipelineError> {
        let config: Self = toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string().replace('\n', " ")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            sigma_steps: self.sigma_steps,
            baseline: self.baseline,
        }
    }
}

/// Loads and featurizes every manifest entry with the given role, in
/// manifest order.
pub fn featurize_role(
    manifest: &Manifest,
    role: Role,
    grid_hz: u32,
) -> Result<Vec<(ManifestEntry, Vec<FeatureWindow>)>, PipelineError> {
    let entries: Vec<&ManifestEntry> = manifest.with_role(role).collect();
    entries
        .par_iter()
        .map(|e| {
            let wrap = |source| PipelineError::Subject { id: e.id.clone(), source };
            let record = manifest.load_record(e).map_err(wrap)?;
            let windows = process_record(&record, grid_hz).map_err(wrap)?;
            log::debug!("{}: {} windows", e.id, windows.len());
            Ok(((*e).clone(), windows))
        })
        .collect()
}

/// `subject_id,start_s,<12 features>,fr_label` rows.
pub fn write_windows_csv(path: &Path, windows: &[FeatureWindow]) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "subject_id,start_s,{},fr_label", FEATURE_NAMES.join(","))?;
        for w in windows {
            write!(out, "{},{}", w.subject_id, w.start_s)?;
            for f in &w.features {
                write!(out, ",{f}")?;
            }
            match w.fr_label {
                Some(l) => writeln!(out, ",{l}")?,
                None => writeln!(out, ",")?,
            }
        }
        out.flush()
    };
    write().map_err(|e| io_err(path, e))
}

/// Trains the fear-response ensemble on the annotated source subjects.
pub fn train_fr(manifest: &Manifest, config: &PipelineConfig) -> Result<TrainedEnsemble, PipelineError> {
    let source = featurize_role(manifest, Role::Source, config.grid_hz)?;
    if source.is_empty() {
        return Err(PipelineError::NoSubjects("source"));
    }
    let windows: Vec<FeatureWindow> = source.into_iter().flat_map(|(_, w)| w).collect();
    Ok(train_ensemble(&windows, config.k, &config.mlp)?)
}

/// Fear curves and static features for every target subject.
pub fn target_features(
    manifest: &Manifest,
    ensemble: &FrEnsemble,
    grid_hz: u32,
) -> Result<Vec<(FearCurve, StaticRow)>, PipelineError> {
    let target = featurize_role(manifest, Role::Target, grid_hz)?;
    if target.is_empty() {
        return Err(PipelineError::NoSubjects("target"));
    }
    target
        .par_iter()
        .map(|(entry, windows)| {
            let wrap = |source| PipelineError::Curve { id: entry.id.clone(), source };
            let curve = build_curve(ensemble, windows).map_err(wrap)?;
            let f = assemble(&curve, entry.sex).map_err(wrap)?;
            let row = StaticRow {
                subject_id: entry.id.clone(),
                slope: f.slope,
                initial_fr: f.initial_fr,
                sex: f.sex,
                pclm: entry.pclm,
            };
            Ok((curve, row))
        })
        .collect()
}

pub fn write_curves(out_dir: &Path, curves: &[(FearCurve, StaticRow)]) -> Result<(), PipelineError> {
    let dir = out_dir.join(CURVE_DIR);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for (curve, _) in curves {
        write_curve_csv(&dir.join(format!("{}.csv", curve.subject_id)), curve)?;
    }
    let rows: Vec<StaticRow> = curves.iter().map(|(_, r)| r.clone()).collect();
    write_static_csv(&out_dir.join(STATIC_FILE), &rows)?;
    Ok(())
}

pub fn evaluate_rows(rows: &[StaticRow], config: &PipelineConfig) -> Result<EvalReport, PipelineError> {
    let subjects = rows
        .iter()
        .map(LabeledSubject::from_static)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(loo_evaluate(&subjects, &config.eval_config())?)
}

pub fn write_report(out_dir: &Path, report: &EvalReport) -> Result<(), PipelineError> {
    let dir = out_dir.join(DENSITY_DIR);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for s in &report.subjects {
        s.density.write_csv(&dir.join(format!("{}.csv", s.id)))?;
    }
    report.spiderp.confusion.write_csv(&out_dir.join(CONFUSION_FILE))?;
    let path = out_dir.join(REPORT_FILE);
    fs::write(&path, report.to_json() + "\n").map_err(|e| io_err(&path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Curves, static features, LOO evaluation and every output file.
pub fn evaluate(
    manifest: &Manifest,
    ensemble: &FrEnsemble,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<EvalReport, PipelineError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let curves = target_features(manifest, ensemble, config.grid_hz)?;
    write_curves(out_dir, &curves)?;
    let rows: Vec<StaticRow> = curves.into_iter().map(|(_, r)| r).collect();
    let report = evaluate_rows(&rows, config)?;
    write_report(out_dir, &report)?;
    Ok(report)
}

/// Plain-text summary of a report.
pub fn summarize(report: &EvalReport) -> String {
    let mut s = format!("subjects: {}\n", report.n_subjects);
    s += &format!("{:<18}{:>8}{:>10}{:>10}\n", "model", "MAE", "MAPE %", "accuracy");
    for (name, m) in [
        ("spiderp", &report.spiderp),
        ("constant baseline", &report.constant_baseline),
        ("sex baseline", &report.sex_baseline),
    ] {
        s += &format!("{name:<18}{:>8.2}{:>10.1}{:>10.3}\n", m.mae, m.mape_percent, m.binary_accuracy);
    }
    let c = report.spiderp.confusion;
    s += &format!("confusion: tp={} fp={} fn={} tn={}\n", c.tp, c.fp, c.fn_, c.tn);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_byte_for_byte() {
        let mut config = PipelineConfig::default();
        config.paths.manifest = Some("cohort/manifest.csv".into());
        config.baseline = BaselineMode::Mode;
        config.mlp.learning_rate = 0.003;
        let dumped = config.to_toml_string();
        let loaded = PipelineConfig::from_toml_str(&dumped).unwrap();
        assert_eq!(loaded, config);
        assert_eq!(loaded.to_toml_string(), dumped);
    }

    #[test]
    fn defaults_match_module_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.grid_hz, 4);
        assert_eq!(c.k, 5);
        assert_eq!(c.sigma_steps, 99);
        assert_eq!(c.mlp, MlpConfig::default());
        assert_eq!(c.mlp.n_units, 16);
        assert_eq!(c.mlp.epochs, 100);
        assert_eq!(c.mlp.batch_size, 512);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = PipelineConfig::from_toml_str("k = 3\n[mlp]\nepochs = 5\n").unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.mlp.epochs, 5);
        assert_eq!(c.mlp.n_units, 16);
        assert!(PipelineConfig::from_toml_str("k = 1").is_err());
        assert!(PipelineConfig::from_toml_str("unknown = 1").is_err());
    }

    #[test]
    fn errors_print_on_one_line() {
        let err = PipelineConfig::from_toml_str("k = \"x\"").unwrap_err();
        assert!(!err.to_string().contains('\n'));
    }
}
