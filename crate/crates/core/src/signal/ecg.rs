//! R-peak detection and heart-rate derivation.
//!
//! The detector follows the Pan–Tompkins structure: a band-pass built from
//! cascaded moving-average (difference) filters, a five-point derivative,
//! squaring, a 150 ms moving-window integrator and dual adaptive thresholds
//! with search-back. All filters are applied zero-phase over the whole
//! record, so integrator peaks line up with QRS centres and no group delay
//! needs to be undone. Each detection is then refined to the maximum of the
//! band-passed signal with parabolic interpolation.

use super::SignalError;

/// Minimum spacing between two beats.
pub const REFRACTORY_S: f64 = 0.24;

const LOWPASS_BOX_S: f64 = 0.03;
const HIGHPASS_BOX_S: f64 = 0.16;
const INTEGRATOR_S: f64 = 0.15;
const REFINE_HALF_WIDTH_S: f64 = 0.075;
const LEARNING_PHASE_S: f64 = 2.0;
const CANDIDATE_SPACING_S: f64 = 0.2;

/// Centered moving average with an odd window; edges average what is available.
fn centered_mean(x: &[f64], len: usize) -> Vec<f64> {
    let half = len / 2;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn odd_len(seconds: f64, fs: f64) -> usize {
    let n = (seconds * fs).round().max(1.0) as usize;
    n | 1
}

/// 5–15 Hz band-pass: a squared boxcar low-pass followed by subtraction of a
/// longer boxcar (high-pass).
pub fn bandpass(ecg: &[f64], fs: f64) -> Vec<f64> {
    let lp_len = odd_len(LOWPASS_BOX_S, fs);
    let low = centered_mean(&centered_mean(ecg, lp_len), lp_len);
    let baseline = centered_mean(&low, odd_len(HIGHPASS_BOX_S, fs));
    low.iter().zip(&baseline).map(|(l, b)| l - b).collect()
}

fn derivative(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    (0..n as isize)
        .map(|i| (-at(i - 2) - 2.0 * at(i - 1) + 2.0 * at(i + 1) + at(i + 2)) * fs / 8.0)
        .collect()
}

/// Band-pass, differentiate, square and integrate.
pub fn integrated_energy(ecg: &[f64], fs: f64) -> (Vec<f64>, Vec<f64>) {
    let bp = bandpass(ecg, fs);
    let squared: Vec<f64> = derivative(&bp, fs).iter().map(|d| d * d).collect();
    let mwi = centered_mean(&squared, odd_len(INTEGRATOR_S, fs));
    (bp, mwi)
}

/// Local maxima of `x`, keeping only the largest within `min_gap` samples.
fn candidate_peaks(x: &[f64], min_gap: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        if !(x[i] > x[i - 1] && x[i] >= x[i + 1]) {
            continue;
        }
        match out.last_mut() {
            Some(last) if i - *last < min_gap => {
                if x[i] > x[*last] {
                    *last = i;
                }
            }
            _ => out.push(i),
        }
    }
    out
}

struct Thresholds {
    spki: f64,
    npki: f64,
}

impl Thresholds {
    fn primary(&self) -> f64 {
        self.npki + 0.25 * (self.spki - self.npki)
    }
}

/// Detects R peaks and returns their times in seconds.
pub fn detect_r_peaks(ecg: &[f64], fs: f64) -> Result<Vec<f64>, SignalError> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(SignalError::BadSamplingRate(fs));
    }
    if (ecg.len() as f64) < 2.0 * fs {
        return Err(SignalError::RecordTooShort {
            duration_s: ecg.len() as f64 / fs,
            required_s: 2.0,
        });
    }
    let (bp, mwi) = integrated_energy(ecg, fs);
    let peak_energy = mwi.iter().cloned().fold(0.0, f64::max);
    if peak_energy <= 0.0 || !peak_energy.is_finite() {
        return Err(SignalError::NoPeaksFound);
    }

    let refractory = (REFRACTORY_S * fs).ceil() as usize;
    let candidates = candidate_peaks(&mwi, (CANDIDATE_SPACING_S * fs).round() as usize);

    let learn = ((LEARNING_PHASE_S * fs) as usize).min(mwi.len());
    let learn_max = mwi[..learn].iter().cloned().fold(0.0, f64::max);
    let learn_mean = mwi[..learn].iter().sum::<f64>() / learn as f64;
    let mut th = Thresholds {
        spki: 0.5 * learn_max,
        npki: 0.5 * learn_mean,
    };

    let mut beats: Vec<usize> = Vec::new();
    let mut rr_recent: Vec<usize> = Vec::new();
    for (ci, &c) in candidates.iter().enumerate() {
        let amp = mwi[c];
        if amp <= th.primary() {
            th.npki = 0.125 * amp + 0.875 * th.npki;
            continue;
        }
        if let Some(&last) = beats.last() {
            if c - last < refractory {
                // Keep the stronger of two detections inside one refractory span.
                if amp > mwi[last] {
                    *beats.last_mut().unwrap() = c;
                }
                continue;
            }
            let rr = c - last;
            if rr_recent.len() >= 2 {
                let avg = rr_recent.iter().sum::<usize>() as f64 / rr_recent.len() as f64;
                if rr as f64 > 1.66 * avg {
                    // Search back for a beat the primary threshold missed.
                    let secondary = 0.5 * th.primary();
                    let missed = candidates[..ci]
                        .iter()
                        .copied()
                        .filter(|&m| m > last + refractory && m + refractory < c)
                        .filter(|&m| mwi[m] > secondary)
                        .max_by(|&a, &b| mwi[a].total_cmp(&mwi[b]));
                    if let Some(m) = missed {
                        th.spki = 0.25 * mwi[m] + 0.75 * th.spki;
                        beats.push(m);
                        rr_recent.push(m - last);
                    }
                }
            }
            let prev = *beats.last().unwrap();
            rr_recent.push(c - prev);
            if rr_recent.len() > 8 {
                rr_recent.remove(0);
            }
        }
        th.spki = 0.125 * amp + 0.875 * th.spki;
        beats.push(c);
    }
    if beats.is_empty() {
        return Err(SignalError::NoPeaksFound);
    }

    let half = (REFINE_HALF_WIDTH_S * fs).round() as usize;
    let mut times: Vec<(f64, f64)> = beats
        .iter()
        .map(|&b| refine(&bp, b, half, fs))
        .collect();
    times.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut peaks: Vec<(f64, f64)> = Vec::with_capacity(times.len());
    for (t, a) in times {
        match peaks.last_mut() {
            Some(last) if t - last.0 < REFRACTORY_S => {
                if a > last.1 {
                    *last = (t, a);
                }
            }
            _ => peaks.push((t, a)),
        }
    }
    Ok(peaks.into_iter().map(|(t, _)| t).collect())
}

/// Maximum of the band-passed signal near `center`, with sub-sample
/// parabolic interpolation. Returns `(time_s, amplitude)`.
fn refine(bp: &[f64], center: usize, half: usize, fs: f64) -> (f64, f64) {
    let lo = center.saturating_sub(half);
    let hi = (center + half + 1).min(bp.len());
    let mut best = lo;
    for i in lo..hi {
        if bp[i] > bp[best] {
            best = i;
        }
    }
    let mut offset = 0.0;
    if best > 0 && best + 1 < bp.len() {
        let (a, b, c) = (bp[best - 1], bp[best], bp[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    ((best as f64 + offset) / fs, bp[best])
}

/// Number of grid samples covering `duration_s` at `grid_hz`.
pub fn grid_len(duration_s: f64, grid_hz: u32) -> usize {
    (duration_s * grid_hz as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Instantaneous heart rate (60 / RR) placed at interval midpoints and
/// linearly interpolated onto a uniform grid; constant beyond the first and
/// last midpoints.
pub fn hr_from_peaks(peaks: &[f64], grid_hz: u32, duration_s: f64) -> Result<Vec<f64>, SignalError> {
    if peaks.len() < 2 {
        return Err(SignalError::TooFewPeaks(peaks.len()));
    }
    let (knots_t, knots_hr): (Vec<f64>, Vec<f64>) = peaks
        .windows(2)
        .map(|w| (0.5 * (w[0] + w[1]), 60.0 / (w[1] - w[0])))
        .unzip();
    let n = grid_len(duration_s, grid_hz);
    Ok((0..n)
        .map(|k| interp_clamped(&knots_t, &knots_hr, k as f64 / grid_hz as f64))
        .collect())
}

/// Piecewise-linear interpolation with flat extrapolation; `xs` must be increasing.
pub(crate) fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let j = xs.partition_point(|&k| k <= x);
    if j == 0 {
        return ys[0];
    }
    if j == xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[j - 1], xs[j]);
    let w = (x - x0) / (x1 - x0);
    ys[j - 1] + w * (ys[j] - ys[j - 1])
}
