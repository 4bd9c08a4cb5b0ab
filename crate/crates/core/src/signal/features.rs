//! Sliding-window featurization: 20 s windows at a 1 s stride, four
//! statistics per channel.

use serde::{Deserialize, Serialize};

use super::channels::ChannelSet;
use super::record::Annotation;
use super::SignalError;

pub const WINDOW_S: u32 = 20;
pub const STRIDE_S: u32 = 1;
pub const FEATURES_PER_CHANNEL: usize = 4;
pub const N_FEATURES: usize = 3 * FEATURES_PER_CHANNEL;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "hr_mean", "hr_std", "hr_diff1", "hr_diff2",
    "phasic_mean", "phasic_std", "phasic_diff1", "phasic_diff2",
    "tonic_mean", "tonic_std", "tonic_diff1", "tonic_diff2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub subject_id: String,
    pub start_s: f64,
    pub features: [f64; N_FEATURES],
    pub fr_label: Option<u8>,
}

/// `(Nmean, Nstd, Ndiff1, Ndiff2)` of one window. Every statistic divides by
/// the window length, and `Nstd` is the mean squared deviation (no root).
pub fn window_stats(w: &[f64]) -> [f64; FEATURES_PER_CHANNEL] {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let spread = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let diff = |lag: usize| -> f64 {
        w.iter().zip(w.iter().skip(lag)).map(|(a, b)| (b - a).abs()).sum::<f64>() / n
    };
    [mean, spread, diff(1), diff(2)]
}

pub fn window_count(n_samples: usize, grid_hz: u32) -> usize {
    let win = (WINDOW_S * grid_hz) as usize;
    if n_samples < win {
        0
    } else {
        (n_samples - win) / (STRIDE_S * grid_hz) as usize + 1
    }
}

/// One window per whole-second start time that fits inside the record.
pub fn featurize(channels: &ChannelSet) -> Result<Vec<FeatureWindow>, SignalError> {
    let g = channels.grid_hz as usize;
    let win = WINDOW_S as usize * g;
    let count = window_count(channels.len(), channels.grid_hz);
    if count == 0 {
        return Err(SignalError::RecordTooShort {
            duration_s: channels.duration_s(),
            required_s: WINDOW_S as f64,
        });
    }
    let chans = channels.channels();
    Ok((0..count)
        .map(|w| {
            let start = w * STRIDE_S as usize * g;
            let mut features = [0.0; N_FEATURES];
            for (c, ch) in chans.iter().enumerate() {
                let stats = window_stats(&ch[start..start + win]);
                features[c * FEATURES_PER_CHANNEL..(c + 1) * FEATURES_PER_CHANNEL]
                    .copy_from_slice(&stats);
            }
            FeatureWindow {
                subject_id: channels.subject_id.clone(),
                start_s: (w * STRIDE_S as usize) as f64,
                features,
                fr_label: None,
            }
        })
        .collect())
}

/// Labels each window from the annotation interval that contains it entirely.
/// Windows straddling a boundary, or lying in an unannotated gap, are dropped.
/// Without annotations the windows pass through unlabeled.
pub fn attach_labels(windows: Vec<FeatureWindow>, annotations: Option<&[Annotation]>) -> Vec<FeatureWindow> {
    let Some(ann) = annotations else {
        return windows;
    };
    windows
        .into_iter()
        .filter_map(|mut w| {
            let end = w.start_s + WINDOW_S as f64;
            let hit = ann.iter().find(|a| a.start_s <= w.start_s && end <= a.end_s)?;
            w.fr_label = Some(hit.fr_label);
            Some(w)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::channels::normalize_subjectwise;
    use proptest::prelude::*;

    fn constant_set(secs: usize, c: f64) -> ChannelSet {
        let n = secs * 4;
        ChannelSet {
            subject_id: "s".into(),
            hr: vec![c; n],
            gsr_phasic: vec![c; n],
            gsr_tonic: vec![c; n],
            grid_hz: 4,
        }
    }

    fn window(start: f64) -> FeatureWindow {
        FeatureWindow {
            subject_id: "s".into(),
            start_s: start,
            features: [0.0; N_FEATURES],
            fr_label: None,
        }
    }

    #[test]
    fn constant_window_has_zero_variation() {
        for w in featurize(&constant_set(25, 1.5)).unwrap() {
            for c in 0..3 {
                assert_eq!(&w.features[c * 4..c * 4 + 4], &[1.5, 0.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn thirty_seconds_give_eleven_windows() {
        let windows = featurize(&constant_set(30, 0.0)).unwrap();
        assert_eq!(windows.len(), 11);
        let starts: Vec<f64> = windows.iter().map(|w| w.start_s).collect();
        assert_eq!(starts, (0..=10).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn too_short_record() {
        assert!(matches!(featurize(&constant_set(19, 0.0)), Err(SignalError::RecordTooShort { .. })));
    }

    #[test]
    fn alternating_window_matches_loop() {
        let w: Vec<f64> = (0..80).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let stats = window_stats(&w);
        let mut d1 = 0.0;
        let mut i = 0;
        while i + 1 < 80 {
            d1 += (w[i + 1] - w[i]).abs();
            i += 1;
        }
        assert!((stats[2] - d1 / 80.0).abs() < 1e-12);
        assert!((stats[2] - 158.0 / 80.0).abs() < 1e-12);
        assert_eq!(stats[0], 0.0);
        assert_eq!(stats[1], 1.0);
        assert_eq!(stats[3], 0.0);
    }

    #[test]
    fn labels_from_containing_interval() {
        let one = [Annotation { start_s: 0.0, end_s: 100.0, fr_label: 1 }];
        let out = attach_labels(vec![window(5.0)], Some(&one));
        assert_eq!(out[0].fr_label, Some(1));

        let two = [
            Annotation { start_s: 0.0, end_s: 30.0, fr_label: 0 },
            Annotation { start_s: 30.0, end_s: 100.0, fr_label: 1 },
        ];
        let out = attach_labels(vec![window(10.0), window(15.0), window(30.0)], Some(&two));
        let got: Vec<(f64, Option<u8>)> = out.iter().map(|w| (w.start_s, w.fr_label)).collect();
        assert_eq!(got, vec![(10.0, Some(0)), (30.0, Some(1))]);

        let out = attach_labels(vec![window(0.0), window(1.0)], None);
        assert!(out.iter().all(|w| w.fr_label.is_none()));
        assert_eq!(out.len(), 2);
    }

    fn wavy(n: usize, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / 4.0 + phase;
                (0.3 * t).sin() + 0.5 * (1.7 * t).cos() + 0.01 * t
            })
            .collect()
    }

    #[test]
    fn shifting_by_whole_seconds_shifts_windows() {
        let k = 7;
        let base = wavy(400, 0.0);
        let set = |x: Vec<f64>| ChannelSet {
            subject_id: "s".into(),
            gsr_phasic: x.iter().map(|v| v * v).collect(),
            gsr_tonic: x.iter().map(|v| v.abs()).collect(),
            hr: x,
            grid_hz: 4,
        };
        let a = featurize(&set(base.clone())).unwrap();
        let b = featurize(&set(base[k * 4..].to_vec())).unwrap();
        for (i, wb) in b.iter().enumerate() {
            for (x, y) in a[i + k].features.iter().zip(&wb.features) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn features_ignore_affine_rescaling(a in 0.01f64..100.0, b in -1e3f64..1e3) {
            let n = 160;
            let raw = ChannelSet {
                subject_id: "s".into(),
                hr: wavy(n, 0.0),
                gsr_phasic: wavy(n, 1.0),
                gsr_tonic: wavy(n, 2.0),
                grid_hz: 4,
            };
            let mut scaled = raw.clone();
            for v in scaled.hr.iter_mut().chain(&mut scaled.gsr_phasic).chain(&mut scaled.gsr_tonic) {
                *v = a * *v + b;
            }
            let f0 = featurize(&normalize_subjectwise(&raw).unwrap()).unwrap();
            let f1 = featurize(&normalize_subjectwise(&scaled).unwrap()).unwrap();
            for (w0, w1) in f0.iter().zip(&f1) {
                for (x, y) in w0.features.iter().zip(&w1.features) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }
}
