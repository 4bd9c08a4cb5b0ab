//! Record ingestion, channel derivation and window featurization.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod channels;
pub mod ecg;
pub mod features;
pub mod gsr;
pub mod record;

pub use channels::{derive_channels, normalize_subjectwise, ChannelSet, DEFAULT_GRID_HZ};
pub use ecg::{detect_r_peaks, hr_from_peaks};
pub use features::{attach_labels, featurize, FeatureWindow, N_FEATURES};
pub use gsr::decompose_gsr;
pub use record::{load_record, Annotation, Manifest, ManifestEntry, RawRecord, Role};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("ecg has {ecg} samples but gsr has {gsr}")]
    LengthMismatch { ecg: usize, gsr: usize },
    #[error("sampling rate must be positive, got {0}")]
    BadSamplingRate(f64),
    #[error("record lasts {duration_s} s, need at least {required_s} s")]
    RecordTooShort { duration_s: f64, required_s: f64 },
    #[error("{path}: row {row} has t={found}, expected {expected}")]
    TimeMismatch {
        path: PathBuf,
        row: usize,
        found: f64,
        expected: f64,
    },
    #[error("{path}: header must be `{expected}`")]
    BadHeader { path: PathBuf, expected: String },
    #[error("{path}: unparseable value on data row {row}")]
    BadValue { path: PathBuf, row: usize },
    #[error("annotation {index}: {reason}")]
    InvalidAnnotation { index: usize, reason: String },
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("no R peaks found")]
    NoPeaksFound,
    #[error("need at least 2 R peaks, found {0}")]
    TooFewPeaks(usize),
    #[error("heart rate {0} BPM outside the plausible range")]
    HrOutOfRange(f64),
    #[error("channel {0} has zero variance")]
    DeadChannel(&'static str),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl SignalError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// Full per-record preprocessing: derive channels, normalize, featurize and
/// label windows when the record carries annotations.
pub fn process_record(record: &RawRecord, grid_hz: u32) -> Result<Vec<FeatureWindow>, SignalError> {
    let channels = normalize_subjectwise(&derive_channels(record, grid_hz)?)?;
    let windows = featurize(&channels)?;
    Ok(attach_labels(windows, record.annotations.as_deref()))
}
