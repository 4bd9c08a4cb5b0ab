//! Tonic/phasic split of skin conductance.
//!
//! The signal is box-averaged onto the uniform grid, the tonic level is a
//! 4 s running median of the grid signal, and the phasic part is the
//! residual. The tonic value is snapped onto the same binary grid as the
//! sample it is subtracted from, which makes the subtraction exact, so
//! `tonic + phasic` reproduces the grid signal bit-for-bit.

use super::ecg::grid_len;
use super::SignalError;

pub const TONIC_KERNEL_S: f64 = 4.0;

/// Box-averages `x` (sampled at `fs`) onto a `grid_hz` grid.
pub fn downsample(x: &[f64], fs: f64, grid_hz: u32) -> Vec<f64> {
    let g = grid_hz as f64;
    let n = grid_len(x.len() as f64 / fs, grid_hz);
    (0..n)
        .map(|k| {
            let lo = ((k as f64 * fs / g) - 1e-9).ceil().max(0.0) as usize;
            let hi = ((((k + 1) as f64 * fs / g) - 1e-9).ceil() as usize).min(x.len());
            if hi > lo {
                x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            } else {
                x[lo.min(x.len() - 1)]
            }
        })
        .collect()
}

/// Running median over `2 * half + 1` samples, truncated at the edges.
pub fn running_median(x: &[f64], half: usize) -> Vec<f64> {
    let mut buf = Vec::with_capacity(2 * half + 1);
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            buf.clear();
            buf.extend_from_slice(&x[lo..hi]);
            buf.sort_by(f64::total_cmp);
            let m = buf.len();
            if m % 2 == 1 {
                buf[m / 2]
            } else {
                0.5 * (buf[m / 2 - 1] + buf[m / 2])
            }
        })
        .collect()
}

/// Distance between `|x|` and the next representable double.
fn ulp(x: f64) -> f64 {
    let a = x.abs();
    f64::from_bits(a.to_bits() + 1) - a
}

/// Smallest power of two strictly above `|x|`, for normal `x`.
fn binade_top(x: f64) -> Option<f64> {
    let biased = (x.abs().to_bits() >> 52) & 0x7ff;
    if biased == 0 || biased >= 0x7fe {
        return None;
    }
    Some(f64::from_bits((biased + 1) << 52))
}

/// A value close to `level` such that `t + (x - t) == x` in floating point.
///
/// Snapping `level` to a multiple of `ulp(x)` within `2^e` of `x` (where
/// `|x| < 2^e`) keeps `x - t` exactly representable.
pub fn exact_split_level(x: f64, level: f64) -> f64 {
    let reconstructs = |t: f64| t + (x - t) == x;
    if x == 0.0 || reconstructs(level) {
        return level;
    }
    let u = ulp(x);
    let snapped = (level / u).round() * u;
    if snapped.is_finite() && reconstructs(snapped) {
        return snapped;
    }
    if let Some(top) = binade_top(x) {
        let span = top - u;
        let clamped = if snapped.is_finite() { snapped } else { level }.clamp(x - span, x + span);
        if reconstructs(clamped) {
            return clamped;
        }
    }
    x
}

/// Splits `gsr` into `(phasic, tonic)` on the `grid_hz` grid.
pub fn decompose_gsr(gsr: &[f64], fs: f64, grid_hz: u32) -> Result<(Vec<f64>, Vec<f64>), SignalError> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(SignalError::BadSamplingRate(fs));
    }
    if (gsr.len() as f64) < 10.0 * fs {
        return Err(SignalError::RecordTooShort {
            duration_s: gsr.len() as f64 / fs,
            required_s: 10.0,
        });
    }
    let grid = downsample(gsr, fs, grid_hz);
    let half = (TONIC_KERNEL_S * grid_hz as f64 / 2.0).round() as usize;
    let tonic: Vec<f64> = running_median(&grid, half)
        .into_iter()
        .zip(&grid)
        .map(|(m, &x)| exact_split_level(x, m))
        .collect();
    let phasic = grid.iter().zip(&tonic).map(|(x, t)| x - t).collect();
    Ok((phasic, tonic))
}
