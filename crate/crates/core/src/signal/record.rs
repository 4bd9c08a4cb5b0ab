//! Raw multichannel records and their on-disk formats.
//!
//! A cohort is described by a manifest CSV with one row per subject:
//!
//! ```text
//! id,role,sex,pclm,fs,ecg_path,gsr_path,annotation_path
//! s000,source,0,,128,s000_ecg.csv,s000_gsr.csv,s000_ann.csv
//! t000,target,1,52,128,t000_ecg.csv,t000_gsr.csv,
//! ```
//!
//! Relative paths are resolved against the manifest's directory. Signal files
//! are `t,value` CSVs and annotation files are `start_s,end_s,fr_label` CSVs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SignalError;

/// Allowed disagreement between a CSV `t` column and `index / fs`.
pub const TIME_TOLERANCE_S: f64 = 1e-6;

/// Shortest record the featurizer accepts, in seconds.
pub const MIN_RECORD_S: f64 = 20.0;

/// A labeled interval; `fr_label` is 1 during a fear response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub start_s: f64,
    pub end_s: f64,
    pub fr_label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub subject_id: String,
    pub fs: f64,
    pub ecg: Vec<f64>,
    pub gsr: Vec<f64>,
    pub annotations: Option<Vec<Annotation>>,
}

impl RawRecord {
    /// Builds a record and checks every structural invariant.
    pub fn new(
        subject_id: impl Into<String>,
        fs: f64,
        ecg: Vec<f64>,
        gsr: Vec<f64>,
        annotations: Option<Vec<Annotation>>,
    ) -> Result<Self, SignalError> {
        let record = Self {
            subject_id: subject_id.into(),
            fs,
            ecg,
            gsr,
            annotations,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn duration_s(&self) -> f64 {
        self.ecg.len() as f64 / self.fs
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(SignalError::BadSamplingRate(self.fs));
        }
        if self.ecg.len() != self.gsr.len() {
            return Err(SignalError::LengthMismatch {
                ecg: self.ecg.len(),
                gsr: self.gsr.len(),
            });
        }
        if self.duration_s() < MIN_RECORD_S {
            return Err(SignalError::RecordTooShort {
                duration_s: self.duration_s(),
                required_s: MIN_RECORD_S,
            });
        }
        if let Some(ann) = &self.annotations {
            validate_annotations(ann, self.duration_s())?;
        }
        Ok(())
    }
}

/// Intervals must be ordered, inside `[0, duration]`, non-overlapping and binary.
pub fn validate_annotations(ann: &[Annotation], duration_s: f64) -> Result<(), SignalError> {
    let mut last_end = 0.0;
    for (i, a) in ann.iter().enumerate() {
        let bad = |reason: &str| SignalError::InvalidAnnotation {
            index: i,
            reason: reason.to_string(),
        };
        if a.fr_label > 1 {
            return Err(bad("fr_label must be 0 or 1"));
        }
        if !(a.start_s.is_finite() && a.end_s.is_finite()) || a.start_s >= a.end_s {
            return Err(bad("interval must satisfy start_s < end_s"));
        }
        if a.start_s < 0.0 || a.end_s > duration_s + TIME_TOLERANCE_S {
            return Err(bad("interval lies outside the record"));
        }
        if a.start_s < last_end {
            return Err(bad("intervals overlap or are out of order"));
        }
        last_end = a.end_s;
    }
    Ok(())
}

/// Reads a `t,value` signal file, checking the time column against `fs`.
pub fn read_signal_csv(path: &Path, fs: f64) -> Result<Vec<f64>, SignalError> {
    let file = File::open(path).map_err(|_| SignalError::MissingFile(path.to_path_buf()))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    check_header(&mut reader, path, &["t", "value"])?;
    let mut values = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| SignalError::csv(path, e))?;
        let t = parse_field(&row, 0, path, i)?;
        let v = parse_field(&row, 1, path, i)?;
        let expected = i as f64 / fs;
        if (t - expected).abs() > TIME_TOLERANCE_S {
            return Err(SignalError::TimeMismatch {
                path: path.to_path_buf(),
                row: i,
                found: t,
                expected,
            });
        }
        values.push(v);
    }
    Ok(values)
}

pub fn write_signal_csv(path: &Path, fs: f64, values: &[f64]) -> Result<(), SignalError> {
    let file = File::create(path).map_err(|e| SignalError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "t,value")?;
        for (i, v) in values.iter().enumerate() {
            writeln!(out, "{},{:.6}", i as f64 / fs, v)?;
        }
        out.flush()
    };
    write().map_err(|e| SignalError::io(path, e))
}

pub fn read_annotations_csv(path: &Path) -> Result<Vec<Annotation>, SignalError> {
    let file = File::open(path).map_err(|_| SignalError::MissingFile(path.to_path_buf()))?;
    let mut reader = csv::Reader::from_reader(file);
    check_header(&mut reader, path, &["start_s", "end_s", "fr_label"])?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| SignalError::csv(path, e)))
        .collect()
}

pub fn write_annotations_csv(path: &Path, ann: &[Annotation]) -> Result<(), SignalError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| SignalError::csv(path, e))?;
    for a in ann {
        writer.serialize(a).map_err(|e| SignalError::csv(path, e))?;
    }
    writer.flush().map_err(|e| SignalError::io(path, e))
}

fn check_header<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    path: &Path,
    expected: &[&str],
) -> Result<(), SignalError> {
    let header = reader.headers().map_err(|e| SignalError::csv(path, e))?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(SignalError::BadHeader {
            path: path.to_path_buf(),
            expected: expected.join(","),
        });
    }
    Ok(())
}

fn parse_field(
    row: &csv::StringRecord,
    col: usize,
    path: &Path,
    line: usize,
) -> Result<f64, SignalError> {
    row.get(col)
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| SignalError::BadValue {
            path: path.to_path_buf(),
            row: line,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
}

/// One subject row of the cohort manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub role: Role,
    pub sex: u8,
    pub pclm: Option<u8>,
    pub fs: f64,
    pub ecg_path: PathBuf,
    pub gsr_path: PathBuf,
    pub annotation_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, SignalError> {
        let file = File::open(path).map_err(|_| SignalError::MissingFile(path.to_path_buf()))?;
        let mut reader = csv::Reader::from_reader(file);
        let entries: Vec<ManifestEntry> = reader
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| SignalError::csv(path, e))?;
        for e in &entries {
            if e.sex > 1 {
                return Err(SignalError::BadManifest(format!("{}: sex must be 0 or 1", e.id)));
            }
            if let Some(p) = e.pclm {
                if !(17..=85).contains(&p) {
                    return Err(SignalError::BadManifest(format!(
                        "{}: pclm {p} outside 17..=85",
                        e.id
                    )));
                }
            }
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { base_dir, entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), SignalError> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| SignalError::csv(path, e))?;
        for e in &self.entries {
            writer.serialize(e).map_err(|e| SignalError::csv(path, e))?;
        }
        writer.flush().map_err(|e| SignalError::io(path, e))
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_record(&self, entry: &ManifestEntry) -> Result<RawRecord, SignalError> {
        load_record(entry, &self.base_dir)
    }
}

/// Loads and validates the record a manifest row points at.
pub fn load_record(entry: &ManifestEntry, base_dir: &Path) -> Result<RawRecord, SignalError> {
    if !(entry.fs.is_finite() && entry.fs > 0.0) {
        return Err(SignalError::BadSamplingRate(entry.fs));
    }
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };
    let ecg = read_signal_csv(&resolve(&entry.ecg_path), entry.fs)?;
    let gsr = read_signal_csv(&resolve(&entry.gsr_path), entry.fs)?;
    let annotations = match &entry.annotation_path {
        Some(p) => Some(read_annotations_csv(&resolve(p))?),
        None => None,
    };
    RawRecord::new(entry.id.clone(), entry.fs, ecg, gsr, annotations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(fs: f64) -> ManifestEntry {
        ManifestEntry {
            id: "s1".into(),
            role: Role::Source,
            sex: 0,
            pclm: None,
            fs,
            ecg_path: "ecg.csv".into(),
            gsr_path: "gsr.csv".into(),
            annotation_path: None,
        }
    }

    fn write_pair(dir: &Path, fs: f64, n_ecg: usize, n_gsr: usize) {
        let ecg: Vec<f64> = (0..n_ecg).map(|i| (i as f64 * 0.1).sin()).collect();
        let gsr: Vec<f64> = (0..n_gsr).map(|i| 5.0 + i as f64 * 1e-4).collect();
        write_signal_csv(&dir.join("ecg.csv"), fs, &ecg).unwrap();
        write_signal_csv(&dir.join("gsr.csv"), fs, &gsr).unwrap();
    }

    #[test]
    fn sixty_second_record_at_256_hz() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), 256.0, 15360, 15360);
        let rec = load_record(&entry(256.0), dir.path()).unwrap();
        assert_eq!(rec.ecg.len(), 15360);
        assert_eq!(rec.gsr.len(), 15360);
        assert!((rec.duration_s() - 60.0).abs() < 1e-12);
    }

    #[test]
    fn short_gsr_is_a_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), 256.0, 15360, 15359);
        let err = load_record(&entry(256.0), dir.path()).unwrap_err();
        assert!(matches!(err, SignalError::LengthMismatch { ecg: 15360, gsr: 15359 }));
    }

    #[test]
    fn zero_sampling_rate_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_record(&entry(0.0), dir.path()).unwrap_err();
        assert!(matches!(err, SignalError::BadSamplingRate(_)));
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_record(&entry(256.0), dir.path()).unwrap_err();
        assert!(matches!(err, SignalError::MissingFile(_)));
    }

    #[test]
    fn time_column_must_match_declared_rate() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), 128.0, 6000, 6000);
        let err = load_record(&entry(256.0), dir.path()).unwrap_err();
        assert!(matches!(err, SignalError::TimeMismatch { row: 1, .. }));
    }

    #[test]
    fn overlapping_annotations_are_invalid() {
        let ann = [
            Annotation { start_s: 0.0, end_s: 30.0, fr_label: 0 },
            Annotation { start_s: 29.0, end_s: 60.0, fr_label: 1 },
        ];
        assert!(validate_annotations(&ann, 60.0).is_err());
        let ok = [
            Annotation { start_s: 0.0, end_s: 30.0, fr_label: 0 },
            Annotation { start_s: 30.0, end_s: 60.0, fr_label: 1 },
        ];
        validate_annotations(&ok, 60.0).unwrap();
        let outside = [Annotation { start_s: 0.0, end_s: 61.0, fr_label: 0 }];
        assert!(validate_annotations(&outside, 60.0).is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut target = entry(128.0);
        target.id = "t1".into();
        target.role = Role::Target;
        target.pclm = Some(52);
        target.annotation_path = None;
        let mut source = entry(128.0);
        source.annotation_path = Some("ann.csv".into());
        let m = Manifest {
            base_dir: dir.path().to_path_buf(),
            entries: vec![source, target],
        };
        let path = dir.path().join("manifest.csv");
        m.write(&path).unwrap();
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back, m);
    }
}
