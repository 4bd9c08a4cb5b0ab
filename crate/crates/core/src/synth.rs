//! Synthetic source and target cohorts with planted ground truth.
//!
//! A latent fear state in `[0, 1]`, sampled once per second, drives heart
//! rate and the arrival rate of skin-conductance responses. Source subjects
//! alternate between annotated rest and fear segments. Target subjects follow
//! a per-minute piecewise-linear trajectory whose initial level and trend set
//! the planted PCL-M.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::record::{write_annotations_csv, write_signal_csv};
use crate::signal::{
    Annotation, Manifest, ManifestEntry, RawRecord, Role, SignalError,
};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_source_subjects: usize,
    pub n_target_subjects: usize,
    pub record_duration_s: f64,
    pub fs: f64,

    pub baseline_hr_bpm: f64,
    pub hr_elevation_bpm: f64,
    pub rr_jitter_s: f64,
    pub ecg_noise: f64,

    pub scr_base_rate_per_min: f64,
    pub scr_fear_rate_per_min: f64,
    pub scr_amplitude: f64,
    pub scr_tau_rise_s: f64,
    pub scr_tau_decay_s: f64,
    pub scr_recovery_s: f64,
    pub tonic_fear_gain: f64,

    /// Shortest and longest rest/fear segment of a source record.
    pub segment_s: (f64, f64),

    /// Planted PCL-M = round(intercept + trend_gain * trend + initial_gain * initial).
    pub pclm_intercept: f64,
    pub pclm_trend_gain: f64,
    pub pclm_initial_gain: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_source_subjects: 30,
            n_target_subjects: 24,
            record_duration_s: 600.0,
            fs: 128.0,
            baseline_hr_bpm: 70.0,
            hr_elevation_bpm: 30.0,
            rr_jitter_s: 0.015,
            ecg_noise: 0.02,
            scr_base_rate_per_min: 1.0,
            scr_fear_rate_per_min: 6.0,
            scr_amplitude: 0.3,
            scr_tau_rise_s: 0.15,
            scr_tau_decay_s: 0.5,
            scr_recovery_s: 3.0,
            tonic_fear_gain: 0.5,
            segment_s: (45.0, 90.0),
            pclm_intercept: 38.0,
            pclm_trend_gain: 30.0,
            pclm_initial_gain: -15.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.record_duration_s.is_nan() || self.record_duration_s < 60.0 {
            return bad("record_duration_s must be at least 60");
        }
        if self.fs.is_nan() || self.fs < 50.0 {
            return bad("fs must be at least 50 Hz");
        }
        if self.baseline_hr_bpm <= 0.0 || self.hr_elevation_bpm < 0.0 {
            return bad("heart-rate parameters must be non-negative");
        }
        if self.scr_base_rate_per_min < 0.0 || self.scr_fear_rate_per_min < 0.0 {
            return bad("SCR rates must be non-negative");
        }
        if !(self.scr_tau_rise_s > 0.0 && self.scr_tau_decay_s > self.scr_tau_rise_s) {
            return bad("SCR time constants need 0 < rise < decay");
        }
        if !(self.segment_s.0 > 0.0 && self.segment_s.1 >= self.segment_s.0) {
            return bad("segment_s must be an increasing positive pair");
        }
        if self.rr_jitter_s < 0.0 || self.ecg_noise < 0.0 {
            return bad("noise levels must be non-negative");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SynthError> {
        let config: Self = toml::from_str(s).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn n_samples(&self) -> usize {
        (self.record_duration_s * self.fs).round() as usize
    }

    /// Planted PCL-M for a trajectory, clamped to 17..=85.
    pub fn planted_pclm(&self, initial: f64, trend: f64) -> u8 {
        let raw = self.pclm_intercept + self.pclm_trend_gain * trend + self.pclm_initial_gain * initial;
        raw.round().clamp(17.0, 85.0) as u8
    }
}

/// Fear state sampled once per second; values between samples are linear.
#[derive(Debug, Clone, PartialEq)]
pub struct FearTrajectory {
    pub per_second: Vec<f64>,
}

impl FearTrajectory {
    pub fn constant(level: f64, duration_s: f64) -> Self {
        Self {
            per_second: vec![level; duration_s.ceil() as usize + 1],
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let last = self.per_second.len() - 1;
        let t = t.clamp(0.0, last as f64);
        let i = (t.floor() as usize).min(last.saturating_sub(1));
        let frac = t - i as f64;
        if last == 0 {
            return self.per_second[0];
        }
        self.per_second[i] * (1.0 - frac) + self.per_second[i + 1] * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcgTrace {
    pub samples: Vec<f64>,
    pub peak_times_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsrTrace {
    pub samples: Vec<f64>,
    pub pulse_times_s: Vec<f64>,
}

fn add_gaussian(samples: &mut [f64], fs: f64, center_s: f64, width_s: f64, amplitude: f64) {
    let n = samples.len() as isize;
    let lo = (((center_s - 5.0 * width_s) * fs).floor() as isize).max(0);
    let hi = (((center_s + 5.0 * width_s) * fs).ceil() as isize).min(n - 1);
    for i in lo..=hi {
        let d = (i as f64 / fs - center_s) / width_s;
        samples[i as usize] += amplitude * (-0.5 * d * d).exp();
    }
}

/// ECG with Gaussian R-waves at `RR = 60 / (baseline + elevation * fear)`
/// plus jitter, a T-wave, baseline wander and white noise.
pub fn gen_ecg(fear: &FearTrajectory, config: &SynthConfig, rng: &mut impl Rng) -> EcgTrace {
    let fs = config.fs;
    let n = config.n_samples();
    let duration = n as f64 / fs;
    let jitter = Normal::new(0.0, config.rr_jitter_s.max(1e-12)).unwrap();
    let mut samples = vec![0.0; n];
    let mut peaks = Vec::new();
    let mut t = rng.random_range(0.2..0.6);
    // Only beats whose R-wave lies entirely inside the record are planted.
    while t < duration - 0.1 {
        peaks.push(t);
        let hr = config.baseline_hr_bpm + config.hr_elevation_bpm * fear.at(t);
        let rr = 60.0 / hr;
        add_gaussian(&mut samples, fs, t, 0.012, 1.0);
        add_gaussian(&mut samples, fs, t + 0.25 * rr.min(1.2), 0.04, 0.25);
        let step = if config.rr_jitter_s > 0.0 { rr + jitter.sample(rng) } else { rr };
        t += step.max(0.3);
    }
    let phase = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, config.ecg_noise.max(1e-12)).unwrap();
    for (i, s) in samples.iter_mut().enumerate() {
        let ti = i as f64 / fs;
        *s += 0.05 * (2.0 * PI * 0.25 * ti + phase).sin();
        if config.ecg_noise > 0.0 {
            *s += noise.sample(rng);
        }
    }
    EcgTrace {
        samples,
        peak_times_s: peaks,
    }
}

/// Peak height of the unit bi-exponential `exp(-t/decay) - exp(-t/rise)`.
pub fn scr_peak(tau_rise: f64, tau_decay: f64) -> f64 {
    let t_peak = (tau_decay / tau_rise).ln() * tau_rise * tau_decay / (tau_decay - tau_rise);
    (-t_peak / tau_decay).exp() - (-t_peak / tau_rise).exp()
}

/// SCR pulse height `t` seconds after onset, scaled to a unit peak.
pub fn scr_shape(t: f64, tau_rise: f64, tau_decay: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    ((-t / tau_decay).exp() - (-t / tau_rise).exp()) / scr_peak(tau_rise, tau_decay)
}

/// Skin conductance: a slow tonic level that follows the fear state, plus
/// SCR pulses arriving at `base + fear_rate * fear` events per minute.
pub fn gen_gsr(fear: &FearTrajectory, config: &SynthConfig, rng: &mut impl Rng) -> GsrTrace {
    let fs = config.fs;
    let n = config.n_samples();
    let duration = n as f64 / fs;

    // Thinning of a homogeneous process at the maximal rate.
    let max_rate = (config.scr_base_rate_per_min + config.scr_fear_rate_per_min) / 60.0;
    let mut pulses = Vec::new();
    if max_rate > 0.0 {
        let gap = Exp::new(max_rate).unwrap();
        let mut t = gap.sample(rng);
        while t < duration {
            let rate = (config.scr_base_rate_per_min + config.scr_fear_rate_per_min * fear.at(t)) / 60.0;
            if rng.random::<f64>() * max_rate < rate {
                pulses.push(t);
            }
            t += gap.sample(rng);
        }
    }

    let level = rng.random_range(2.0..8.0);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            level + 0.2 * (2.0 * PI * t / 400.0 + drift_phase).sin() + config.tonic_fear_gain * fear.at(t)
        })
        .collect();

    let amp = Uniform::new(0.7, 1.3).unwrap();
    let span = 2.0 * config.scr_recovery_s;
    for &onset in &pulses {
        let a = config.scr_amplitude * amp.sample(rng);
        let lo = (onset * fs).ceil() as usize;
        let hi = (((onset + span) * fs).floor() as usize).min(n.saturating_sub(1));
        for (i, s) in samples.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *s += a * scr_shape(i as f64 / fs - onset, config.scr_tau_rise_s, config.scr_tau_decay_s);
        }
    }
    GsrTrace {
        samples,
        pulse_times_s: pulses,
    }
}

/// Alternating rest/fear segments starting at rest, with a fear intensity
/// per fear segment.
pub fn source_trajectory(config: &SynthConfig, rng: &mut impl Rng) -> (FearTrajectory, Vec<Annotation>) {
    let duration = config.n_samples() as f64 / config.fs;
    let (lo, hi) = config.segment_s;
    let mut annotations = Vec::new();
    let mut per_second = vec![0.0; duration.ceil() as usize + 1];
    let mut start = 0.0;
    let mut fear = rng.random_bool(0.5);
    while start < duration {
        let len = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let end = (start + len).min(duration);
        let level = if fear { rng.random_range(0.75..1.0) } else { 0.0 };
        annotations.push(Annotation {
            start_s: start,
            end_s: end,
            fr_label: u8::from(fear),
        });
        let (a, b) = (start.ceil() as usize, (end.ceil() as usize).min(per_second.len()));
        for v in &mut per_second[a..b] {
            *v = level;
        }
        start = end;
        fear = !fear;
    }
    (FearTrajectory { per_second }, annotations)
}

/// Planted target-subject trajectory parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedTrajectory {
    pub ptsd: bool,
    pub initial: f64,
    pub trend: f64,
    pub pclm: u8,
}

/// Per-minute knots at `initial + trend * t / duration` with a small wobble,
/// linearly interpolated to one value per second.
pub fn target_trajectory(config: &SynthConfig, ptsd: bool, rng: &mut impl Rng) -> (FearTrajectory, PlantedTrajectory) {
    let (initial, trend) = if ptsd {
        (rng.random_range(0.05..0.3), rng.random_range(0.4..0.7))
    } else {
        (rng.random_range(0.45..0.8), rng.random_range(-0.45..-0.15))
    };
    let duration = config.n_samples() as f64 / config.fs;
    let n_knots = (duration / 60.0).ceil() as usize + 1;
    let wobble = Normal::new(0.0, 0.03).unwrap();
    let knots: Vec<f64> = (0..n_knots)
        .map(|k| {
            let frac = (k as f64 * 60.0 / duration).min(1.0);
            (initial + trend * frac + wobble.sample(rng)).clamp(0.0, 1.0)
        })
        .collect();
    let per_second = (0..=duration.ceil() as usize)
        .map(|s| {
            let pos = s as f64 / 60.0;
            let k = (pos.floor() as usize).min(n_knots - 2);
            let frac = (pos - k as f64).min(1.0);
            knots[k] * (1.0 - frac) + knots[k + 1] * frac
        })
        .collect();
    let planted = PlantedTrajectory {
        ptsd,
        initial,
        trend,
        pclm: config.planted_pclm(initial, trend),
    };
    (FearTrajectory { per_second }, planted)
}

/// One generated subject with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthSubject {
    pub entry: ManifestEntry,
    pub record: RawRecord,
    pub fear: FearTrajectory,
    pub peak_times_s: Vec<f64>,
    pub pulse_times_s: Vec<f64>,
    pub planted: Option<PlantedTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub id: String,
    pub role: Role,
    pub n_peaks: usize,
    pub n_pulses: usize,
    pub planted: Option<PlantedTrajectory>,
}

fn subject_rng(seed: u64, role: Role, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = match role {
        Role::Source => index as u64,
        Role::Target => (1u64 << 32) | index as u64,
    };
    rng.set_stream(stream);
    rng
}

pub fn subject_id(role: Role, index: usize) -> String {
    match role {
        Role::Source => format!("src{index:03}"),
        Role::Target => format!("tgt{index:03}"),
    }
}

/// Generates one subject in memory. Each purpose (trajectory, ECG, GSR)
/// draws from its own stream seeded from the subject stream.
pub fn gen_subject(config: &SynthConfig, role: Role, index: usize) -> Result<SynthSubject, SynthError> {
    let mut root = subject_rng(config.seed, role, index);
    let mut traj_rng = ChaCha8Rng::seed_from_u64(root.next_u64());
    let mut ecg_rng = ChaCha8Rng::seed_from_u64(root.next_u64());
    let mut gsr_rng = ChaCha8Rng::seed_from_u64(root.next_u64());
    let sex = u8::from(root.random_bool(0.5));
    let id = subject_id(role, index);

    let (fear, annotations, planted) = match role {
        Role::Source => {
            let (f, a) = source_trajectory(config, &mut traj_rng);
            (f, Some(a), None)
        }
        Role::Target => {
            // Alternate so each cohort is balanced between the planted groups.
            let (f, p) = target_trajectory(config, index.is_multiple_of(2), &mut traj_rng);
            (f, None, Some(p))
        }
    };
    let ecg = gen_ecg(&fear, config, &mut ecg_rng);
    let gsr = gen_gsr(&fear, config, &mut gsr_rng);
    let record = RawRecord::new(id.clone(), config.fs, ecg.samples, gsr.samples, annotations.clone())?;
    let entry = ManifestEntry {
        id: id.clone(),
        role,
        sex,
        pclm: planted.map(|p| p.pclm),
        fs: config.fs,
        ecg_path: PathBuf::from("signals").join(format!("{id}_ecg.csv")),
        gsr_path: PathBuf::from("signals").join(format!("{id}_gsr.csv")),
        annotation_path: annotations.map(|_| PathBuf::from("annotations").join(format!("{id}.csv"))),
    };
    Ok(SynthSubject {
        entry,
        record,
        fear,
        peak_times_s: ecg.peak_times_s,
        pulse_times_s: gsr.pulse_times_s,
        planted,
    })
}

fn write_subject(dir: &Path, s: &SynthSubject) -> Result<(), SynthError> {
    write_signal_csv(&dir.join(&s.entry.ecg_path), s.record.fs, &s.record.ecg)?;
    write_signal_csv(&dir.join(&s.entry.gsr_path), s.record.fs, &s.record.gsr)?;
    if let (Some(path), Some(ann)) = (&s.entry.annotation_path, &s.record.annotations) {
        write_annotations_csv(&dir.join(path), ann)?;
    }
    Ok(())
}

/// Writes the cohort under `dir`: signal and annotation CSVs, the manifest
/// and a JSON file with the planted ground truth.
pub fn gen_cohort(config: &SynthConfig, dir: &Path) -> Result<Manifest, SynthError> {
    config.validate()?;
    let io = |e: std::io::Error| SynthError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir.join("signals")).map_err(io)?;
    fs::create_dir_all(dir.join("annotations")).map_err(io)?;

    let jobs: Vec<(Role, usize)> = (0..config.n_source_subjects)
        .map(|i| (Role::Source, i))
        .chain((0..config.n_target_subjects).map(|i| (Role::Target, i)))
        .collect();
    let truth = jobs
        .par_iter()
        .map(|&(role, i)| {
            let s = gen_subject(config, role, i)?;
            write_subject(dir, &s)?;
            Ok((
                s.entry,
                SubjectTruth {
                    id: s.record.subject_id,
                    role,
                    n_peaks: s.peak_times_s.len(),
                    n_pulses: s.pulse_times_s.len(),
                    planted: s.planted,
                },
            ))
        })
        .collect::<Result<Vec<_>, SynthError>>()?;

    let (entries, truth): (Vec<_>, Vec<_>) = truth.into_iter().unzip();
    let manifest = Manifest {
        base_dir: dir.to_path_buf(),
        entries,
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    let json = serde_json::to_string_pretty(&truth).expect("truth serializes");
    fs::write(dir.join(TRUTH_FILE), json + "\n").map_err(io)?;
    Ok(manifest)
}

pub fn read_truth(dir: &Path) -> Result<Vec<SubjectTruth>, SynthError> {
    let path = dir.join(TRUTH_FILE);
    let text = fs::read_to_string(&path).map_err(|e| SynthError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| SynthError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::detect_r_peaks;

    fn short_config() -> SynthConfig {
        SynthConfig {
            record_duration_s: 120.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn resting_heart_rate_gives_one_second_beats() {
        let config = SynthConfig {
            baseline_hr_bpm: 60.0,
            rr_jitter_s: 0.0,
            ..short_config()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ecg = gen_ecg(&FearTrajectory::constant(0.0, 120.0), &config, &mut rng);
        for w in ecg.peak_times_s.windows(2) {
            assert!((w[1] - w[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_fear_raises_heart_rate_to_ninety() {
        let config = SynthConfig {
            baseline_hr_bpm: 60.0,
            hr_elevation_bpm: 30.0,
            record_duration_s: 600.0,
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ecg = gen_ecg(&FearTrajectory::constant(1.0, 600.0), &config, &mut rng);
        let p = &ecg.peak_times_s;
        let mean_rr = (p[p.len() - 1] - p[0]) / (p.len() - 1) as f64;
        assert!((60.0 / mean_rr - 90.0).abs() < 1.0);

        let detected = detect_r_peaks(&ecg.samples, config.fs).unwrap();
        assert_eq!(detected.len(), p.len());
        for (d, t) in detected.iter().zip(p) {
            assert!((d - t).abs() <= 0.010);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let config = short_config();
        let fear = FearTrajectory::constant(0.5, 120.0);
        let a = gen_ecg(&fear, &config, &mut ChaCha8Rng::seed_from_u64(9));
        let b = gen_ecg(&fear, &config, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let a = gen_gsr(&fear, &config, &mut ChaCha8Rng::seed_from_u64(9));
        let b = gen_gsr(&fear, &config, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn no_rate_means_no_pulses() {
        let config = SynthConfig {
            scr_base_rate_per_min: 0.0,
            ..short_config()
        };
        let gsr = gen_gsr(&FearTrajectory::constant(0.0, 120.0), &config, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(gsr.pulse_times_s.is_empty());
        let max_step = gsr.samples.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(max_step < 1e-3);
    }

    #[test]
    fn pulse_count_matches_rate() {
        let config = SynthConfig {
            scr_base_rate_per_min: 0.0,
            scr_fear_rate_per_min: 4.0,
            record_duration_s: 600.0,
            ..SynthConfig::default()
        };
        let fear = FearTrajectory::constant(1.0, 600.0);
        for seed in 0..10 {
            let n = gen_gsr(&fear, &config, &mut ChaCha8Rng::seed_from_u64(seed)).pulse_times_s.len() as f64;
            // Poisson with mean 40: three standard deviations is about 19.
            assert!((n - 40.0).abs() <= 3.0 * 40f64.sqrt(), "seed {seed}: {n}");
        }
    }

    #[test]
    fn pulses_recover_within_configured_time() {
        let c = SynthConfig::default();
        let peak = (0..10_000)
            .map(|i| scr_shape(i as f64 * 1e-4, c.scr_tau_rise_s, c.scr_tau_decay_s))
            .fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-6);
        assert!(scr_shape(c.scr_recovery_s, c.scr_tau_rise_s, c.scr_tau_decay_s) < 0.01);
        assert_eq!(scr_shape(-0.1, c.scr_tau_rise_s, c.scr_tau_decay_s), 0.0);
    }

    #[test]
    fn target_trends_follow_group() {
        let c = SynthConfig::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (f, p) = target_trajectory(&c, false, &mut rng);
            assert!(p.trend < 0.0);
            assert!(p.pclm < 36);
            let n = f.per_second.len();
            let head: f64 = f.per_second[..60].iter().sum::<f64>() / 60.0;
            let tail: f64 = f.per_second[n - 60..].iter().sum::<f64>() / 60.0;
            assert!(tail < head);
            let (_, p) = target_trajectory(&c, true, &mut rng);
            assert!(p.trend > 0.0);
            assert!(p.pclm >= 36);
            assert!(f.per_second.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn planted_link_is_clamped() {
        let c = SynthConfig::default();
        assert_eq!(c.planted_pclm(1.0, -1.0), 17);
        assert_eq!(c.planted_pclm(0.0, 5.0), 85);
        assert_eq!(c.planted_pclm(0.2, 0.5), 50);
    }

    #[test]
    fn source_segments_alternate() {
        let c = SynthConfig::default();
        let (f, ann) = source_trajectory(&c, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(ann.len() >= 600 / 90);
        assert_eq!(ann[0].start_s, 0.0);
        assert_eq!(ann.last().unwrap().end_s, 600.0);
        for w in ann.windows(2) {
            assert_eq!(w[0].end_s, w[1].start_s);
            assert_ne!(w[0].fr_label, w[1].fr_label);
        }
        for a in &ann {
            let mid = 0.5 * (a.start_s + a.end_s);
            assert_eq!(f.at(mid) > 0.5, a.fr_label == 1);
        }
    }

    #[test]
    fn cohort_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            n_source_subjects: 2,
            n_target_subjects: 20,
            record_duration_s: 60.0,
            ..SynthConfig::default()
        };
        let manifest = gen_cohort(&config, dir.path()).unwrap();
        let read = Manifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(read.entries, manifest.entries);
        let targets: Vec<_> = read.with_role(Role::Target).collect();
        assert_eq!(targets.len(), 20);
        assert!(targets.iter().all(|e| matches!(e.pclm, Some(17..=85))));
        for e in &read.entries {
            let r = read.load_record(e).unwrap();
            assert_eq!(r.ecg.len(), 60 * 128);
            assert_eq!(r.annotations.is_some(), e.role == Role::Source);
        }
        let truth = read_truth(dir.path()).unwrap();
        assert_eq!(truth.len(), 22);
    }

    #[test]
    fn cohort_regeneration_is_byte_identical() {
        let config = SynthConfig {
            n_source_subjects: 2,
            n_target_subjects: 2,
            record_duration_s: 60.0,
            ..SynthConfig::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_cohort(&config, a.path()).unwrap();
        gen_cohort(&config, b.path()).unwrap();
        for name in ["manifest.csv", "truth.json", "signals/src000_ecg.csv", "signals/tgt001_gsr.csv", "annotations/src001.csv"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        }
    }

    #[test]
    fn config_reads_from_toml() {
        let c = SynthConfig::from_toml_str("seed = 11\nn_target_subjects = 4\n").unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.n_target_subjects, 4);
        assert_eq!(c.fs, 128.0);
        assert!(SynthConfig::from_toml_str("record_duration_s = 30.0").is_err());
        assert!(SynthConfig::from_toml_str("bogus = 1").is_err());
    }
}
