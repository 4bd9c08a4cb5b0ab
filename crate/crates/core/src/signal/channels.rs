use serde::{Deserialize, Serialize};

use super::ecg::{detect_r_peaks, hr_from_peaks};
use super::gsr::decompose_gsr;
use super::record::RawRecord;
use super::SignalError;

pub const DEFAULT_GRID_HZ: u32 = 4;

/// Plausible heart-rate range, exclusive, in BPM.
pub const HR_RANGE_BPM: (f64, f64) = (20.0, 250.0);

pub const CHANNEL_NAMES: [&str; 3] = ["hr", "gsr_phasic", "gsr_tonic"];

/// The three derived physiological channels on one uniform time base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub subject_id: String,
    pub hr: Vec<f64>,
    pub gsr_phasic: Vec<f64>,
    pub gsr_tonic: Vec<f64>,
    pub grid_hz: u32,
}

impl ChannelSet {
    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.grid_hz as f64
    }

    /// Channels in feature order.
    pub fn channels(&self) -> [&[f64]; 3] {
        [&self.hr, &self.gsr_phasic, &self.gsr_tonic]
    }

    fn channels_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [&mut self.hr, &mut self.gsr_phasic, &mut self.gsr_tonic]
    }
}

/// Heart rate from the ECG plus the GSR tonic/phasic split, on a `grid_hz` grid.
pub fn derive_channels(record: &RawRecord, grid_hz: u32) -> Result<ChannelSet, SignalError> {
    let peaks = detect_r_peaks(&record.ecg, record.fs)?;
    let hr = hr_from_peaks(&peaks, grid_hz, record.duration_s())?;
    if let Some(&bad) = hr
        .iter()
        .find(|&&v| !(v > HR_RANGE_BPM.0 && v < HR_RANGE_BPM.1))
    {
        return Err(SignalError::HrOutOfRange(bad));
    }
    let (gsr_phasic, gsr_tonic) = decompose_gsr(&record.gsr, record.fs, grid_hz)?;
    debug_assert_eq!(hr.len(), gsr_phasic.len());
    Ok(ChannelSet {
        subject_id: record.subject_id.clone(),
        hr,
        gsr_phasic,
        gsr_tonic,
        grid_hz,
    })
}

/// Z-scores each channel with the record's own mean and population std.
pub fn normalize_subjectwise(channels: &ChannelSet) -> Result<ChannelSet, SignalError> {
    let mut out = channels.clone();
    for (name, ch) in CHANNEL_NAMES.iter().zip(out.channels_mut()) {
        let n = ch.len() as f64;
        let mean = ch.iter().sum::<f64>() / n;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0 && std.is_finite()) {
            return Err(SignalError::DeadChannel(name));
        }
        for v in ch.iter_mut() {
            *v = (*v - mean) / std;
        }
    }
    Ok(out)
}
