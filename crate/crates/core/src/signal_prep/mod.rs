//! Raw cuff-deflation recording → cleaned, normalized oscillometric
//! waveform segmented into pulses with outlier flags.
//!
//! The stages are exposed individually and chained by [`preprocess`]:
//!
//! 1. [`split_components`]: zero-phase high-pass separates the pulsatile
//!    oscillometric waveform from the slow deflation ramp.
//! 2. [`denoise`]: zero-phase 4th-order Butterworth low-pass at 10 Hz.
//! 3. [`detect_peaks`]: AMPD over overlapping windows.
//! 4. [`segment_pulses`]: trough search with the `4/5` threshold rule.
//! 5. [`flag_outliers`]: median-duration window and modified z-score.
//! 6. [`normalize_omw`]: maximal absolute scaling of pulse amplitudes.

mod ampd;
mod filter;

pub use ampd::ampd;
pub use filter::{Band, Butterworth};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::median;

/// A recorded cuff pressure trace with its identity and reference labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuffDeflationRecord {
    pub subject_id: String,
    pub record_id: String,
    /// Hz.
    pub sampling_rate: f64,
    /// Cuff pressure in mmHg.
    pub samples: Vec<f64>,
    pub ref_sbp: f64,
    pub ref_dbp: f64,
}

impl CuffDeflationRecord {
    /// Builds a record and checks its invariants.
    pub fn new(
        subject_id: impl Into<String>,
        record_id: impl Into<String>,
        sampling_rate: f64,
        samples: Vec<f64>,
        ref_sbp: f64,
        ref_dbp: f64,
    ) -> Result<Self> {
        let record = Self {
            subject_id: subject_id.into(),
            record_id: record_id.into(),
            sampling_rate,
            samples,
            ref_sbp,
            ref_dbp,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() || self.record_id.is_empty() {
            return Err(Error::InvalidRecord("empty subject or record id".into()));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return Err(Error::InvalidRecord(format!(
                "sampling rate must be positive, got {}",
                self.sampling_rate
            )));
        }
        let required = (10.0 * self.sampling_rate).ceil() as usize;
        if self.samples.len() < required {
            return Err(Error::ShortRecord {
                samples: self.samples.len(),
                required,
            });
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRecord("non-finite sample".into()));
        }
        if !(self.ref_sbp > self.ref_dbp && self.ref_dbp > 0.0) {
            return Err(Error::InvalidRecord(format!(
                "reference labels must satisfy sbp > dbp > 0, got {} / {}",
                self.ref_sbp, self.ref_dbp
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate
    }

    /// Linear-interpolation resampling onto `rate` Hz. Returns a clone when
    /// the rate already matches.
    pub fn resampled(&self, rate: f64) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "working rate must be positive, got {rate}"
            )));
        }
        if rate == self.sampling_rate {
            return Ok(self.clone());
        }
        let last_t = (self.samples.len() - 1) as f64 / self.sampling_rate;
        let n_out = (last_t * rate).floor() as usize + 1;
        let samples = (0..n_out)
            .map(|j| {
                let pos = j as f64 * self.sampling_rate / rate;
                let i = (pos.floor() as usize).min(self.samples.len() - 1);
                let frac = pos - i as f64;
                if i + 1 < self.samples.len() && frac > 0.0 {
                    self.samples[i] * (1.0 - frac) + self.samples[i + 1] * frac
                } else {
                    self.samples[i]
                }
            })
            .collect();
        Self::new(
            self.subject_id.clone(),
            self.record_id.clone(),
            rate,
            samples,
            self.ref_sbp,
            self.ref_dbp,
        )
    }
}

/// Pulsatile component of a deflation curve plus the slow pressure trace.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillometricWaveform {
    /// Oscillation amplitude, mmHg (or unitless after normalization).
    pub samples: Vec<f64>,
    /// Cuff pressure with oscillations removed, mmHg.
    pub slow_component: Vec<f64>,
    pub sampling_rate: f64,
}

/// One oscillometric pulse between two consecutive troughs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    pub start_index: usize,
    pub end_index: usize,
    pub peak_index: usize,
    pub peak_amp: f64,
    pub trough_amp: f64,
    /// `peak_amp - trough_amp`.
    pub pulse_amp: f64,
    /// Seconds.
    pub duration: f64,
    pub is_outlier: bool,
    /// The starting trough fell back to the inter-peak minimum.
    pub trough_fallback: bool,
}

impl PulseSegment {
    /// Half-open sample range; consecutive pulses tile without overlap.
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start_index..self.end_index
    }

    /// Pulse samples including both bounding troughs.
    pub fn samples<'a>(&self, omw: &'a [f64]) -> &'a [f64] {
        &omw[self.start_index..=self.end_index]
    }
}

/// Tunables for the preprocessing chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub hp_cutoff_hz: f64,
    pub hp_order: usize,
    pub lp_cutoff_hz: f64,
    pub lp_order: usize,
    /// Records are resampled to this rate before any processing.
    pub working_rate_hz: f64,
    pub ampd_window_s: f64,
    /// Peaks closer than this are merged; also the smallest AMPD scale.
    pub peak_dedup_s: f64,
    /// Locality of the trough local-minimum test, in samples each side.
    pub trough_half_width: usize,
    pub duration_tolerance_s: f64,
    pub mz_threshold: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            hp_cutoff_hz: 0.3,
            hp_order: 2,
            lp_cutoff_hz: 10.0,
            lp_order: 4,
            working_rate_hz: 100.0,
            ampd_window_s: 6.0,
            peak_dedup_s: 0.2,
            trough_half_width: 5,
            duration_tolerance_s: 0.3,
            mz_threshold: 10.0,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hp_cutoff_hz", self.hp_cutoff_hz),
            ("lp_cutoff_hz", self.lp_cutoff_hz),
            ("working_rate_hz", self.working_rate_hz),
            ("ampd_window_s", self.ampd_window_s),
            ("peak_dedup_s", self.peak_dedup_s),
            ("duration_tolerance_s", self.duration_tolerance_s),
            ("mz_threshold", self.mz_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.hp_order == 0 || self.lp_order == 0 {
            return Err(Error::InvalidConfig("filter orders must be positive".into()));
        }
        if self.hp_cutoff_hz >= self.lp_cutoff_hz {
            return Err(Error::InvalidConfig(
                "high-pass cutoff must be below the low-pass cutoff".into(),
            ));
        }
        if self.lp_cutoff_hz >= self.working_rate_hz / 2.0 {
            return Err(Error::InvalidConfig(
                "low-pass cutoff must be below the working Nyquist frequency".into(),
            ));
        }
        Ok(())
    }
}

/// Separates the oscillometric waveform from the deflation ramp with a
/// zero-phase Butterworth high-pass of the given order.
pub fn split_components(
    record: &CuffDeflationRecord,
    hp_cutoff: f64,
    order: usize,
) -> Result<OscillometricWaveform> {
    record.validate()?;
    let hp = Butterworth::highpass(order, hp_cutoff, record.sampling_rate)?;
    let samples = hp.filtfilt(&record.samples)?;
    let slow_component = record
        .samples
        .iter()
        .zip(&samples)
        .map(|(r, o)| r - o)
        .collect();
    Ok(OscillometricWaveform {
        samples,
        slow_component,
        sampling_rate: record.sampling_rate,
    })
}

/// 4th-order, 10 Hz zero-phase Butterworth low-pass.
pub fn denoise(omw: &OscillometricWaveform) -> Result<OscillometricWaveform> {
    denoise_with(omw, 4, 10.0)
}

pub fn denoise_with(
    omw: &OscillometricWaveform,
    order: usize,
    cutoff_hz: f64,
) -> Result<OscillometricWaveform> {
    if omw.sampling_rate <= 2.0 * cutoff_hz {
        return Err(Error::InvalidConfig(format!(
            "sampling rate {} Hz must exceed {} Hz for a {cutoff_hz} Hz low-pass",
            omw.sampling_rate,
            2.0 * cutoff_hz
        )));
    }
    let lp = Butterworth::lowpass(order, cutoff_hz, omw.sampling_rate)?;
    Ok(OscillometricWaveform {
        samples: lp.filtfilt(&omw.samples)?,
        slow_component: omw.slow_component.clone(),
        sampling_rate: omw.sampling_rate,
    })
}

fn is_strict_local_max(x: &[f64], i: usize) -> bool {
    i > 0 && i + 1 < x.len() && x[i] > x[i - 1] && x[i] > x[i + 1]
}

/// Moves `i` uphill to the nearest strict local maximum, at most `reach` steps.
fn climb(x: &[f64], mut i: usize, reach: usize) -> Option<usize> {
    for _ in 0..=reach {
        if is_strict_local_max(x, i) {
            return Some(i);
        }
        let left = if i > 0 { x[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < x.len() { x[i + 1] } else { f64::NEG_INFINITY };
        if right > x[i] && right >= left {
            i += 1;
        } else if left > x[i] {
            i -= 1;
        } else {
            return None;
        }
    }
    None
}

/// Peak detection with AMPD over overlapping windows.
///
/// A first AMPD pass over the whole signal estimates the median inter-peak
/// interval; the window is then `max(window_s, 4 × median interval)`, capped
/// at `2 × window_s` so a first pass locked onto artifacts cannot blow it up,
/// with 50% overlap. Each window contributes the peaks in its central half (the outer
/// quarters of the first and last windows included), peaks are snapped to
/// strict local maxima and merged within `dedup_s`.
pub fn detect_peaks(omw: &OscillometricWaveform, window_s: f64, dedup_s: f64) -> Result<Vec<usize>> {
    let x = &omw.samples;
    let fs = omw.sampling_rate;
    let n = x.len();
    let min_scale = ((dedup_s * fs).round() as usize).max(1);
    let insufficient = |found| Error::InsufficientPulses { found, required: 3 };
    if n < 3 {
        return Err(insufficient(0));
    }

    let first_pass = ampd(x, min_scale);
    let mut window = (window_s * fs).round() as usize;
    if first_pass.len() >= 3 {
        let intervals: Vec<f64> = first_pass
            .windows(2)
            .map(|w| (w[1] - w[0]) as f64)
            .collect();
        window = window.max((4.0 * median(&intervals)).round() as usize).min(2 * window);
    }
    let window = window.clamp(3, n);
    let step = (window / 2).max(1);

    let mut candidates = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(n);
        let is_first = start == 0;
        let is_last = end == n;
        let core_lo = if is_first { 0 } else { start + window / 4 };
        let core_hi = if is_last { n } else { start + window - window / 4 };
        for p in ampd(&x[start..end], min_scale) {
            let idx = start + p;
            if (core_lo..core_hi).contains(&idx) {
                if let Some(peak) = climb(x, idx, min_scale / 2) {
                    candidates.push(peak);
                }
            }
        }
        if is_last {
            break;
        }
        start += step;
    }
    candidates.sort_unstable();
    candidates.dedup();

    let dedup = (dedup_s * fs).round() as usize;
    let mut peaks: Vec<usize> = Vec::with_capacity(candidates.len());
    for c in candidates {
        match peaks.last_mut() {
            Some(last) if c - *last < dedup => {
                if x[c] > x[*last] {
                    *last = c;
                }
            }
            _ => peaks.push(c),
        }
    }
    if peaks.len() < 3 {
        return Err(insufficient(peaks.len()));
    }
    Ok(peaks)
}

/// Trough detection threshold for a minimum `m` followed by peak `p_next`.
pub fn trough_threshold(p_next: f64, m: f64) -> f64 {
    4.0 * (p_next - m) / 5.0
}

/// Locates the trough preceding each peak after the first and cuts the
/// waveform into pulses between consecutive troughs.
///
/// Between peaks `i` and `i + 1` the minimum `M_i` is found first. The trough
/// is the candidate closest to peak `i + 1`, lying after `M_i`, that is the
/// lowest sample among its `half_width` neighbours on each side and stays
/// below `P_{i+1} − thr`. Without such a candidate the trough is `M_i`.
pub fn segment_pulses(
    omw: &OscillometricWaveform,
    peaks: &[usize],
    half_width: usize,
) -> Result<Vec<PulseSegment>> {
    if peaks.len() < 3 {
        return Err(Error::InsufficientPulses {
            found: peaks.len(),
            required: 3,
        });
    }
    let x = &omw.samples;
    let n = x.len();
    let mut troughs: Vec<(usize, bool)> = Vec::with_capacity(peaks.len() - 1);
    for pair in peaks.windows(2) {
        let (p0, p1) = (pair[0], pair[1]);
        let (m_pos, m_val) = (p0..=p1)
            .map(|i| (i, x[i]))
            .fold((p0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        let ceiling = x[p1] - trough_threshold(x[p1], m_val);
        let is_local_min = |j: usize| {
            let lo = j.saturating_sub(half_width);
            let hi = (j + half_width).min(n - 1);
            (lo..=hi).all(|k| x[j] <= x[k])
        };
        let found = (m_pos + 1..p1)
            .rev()
            .find(|&j| x[j] < ceiling && is_local_min(j));
        troughs.push(match found {
            Some(j) => (j, false),
            None => (m_pos, true),
        });
    }

    let pulses = troughs
        .windows(2)
        .zip(&peaks[1..])
        .map(|(t, &peak)| {
            let (start, fallback) = t[0];
            let end = t[1].0;
            let peak_amp = x[peak];
            let trough_amp = x[start];
            PulseSegment {
                start_index: start,
                end_index: end,
                peak_index: peak,
                peak_amp,
                trough_amp,
                pulse_amp: peak_amp - trough_amp,
                duration: (end - start) as f64 / omw.sampling_rate,
                is_outlier: false,
                trough_fallback: fallback,
            }
        })
        .collect();
    Ok(pulses)
}

/// Modified z-score `0.6745 (a − mean) / mad`.
pub fn modified_z_score(amp: f64, mean: f64, mad: f64) -> f64 {
    0.6745 * (amp - mean) / mad
}

/// Flags pulses whose duration leaves `median ± tolerance_s` or whose
/// amplitude modified z-score exceeds `mz_threshold`. When every amplitude
/// equals the median (MAD = 0) the amplitude test is skipped.
pub fn flag_outliers_with(
    pulses: &[PulseSegment],
    tolerance_s: f64,
    mz_threshold: f64,
) -> Result<Vec<PulseSegment>> {
    if pulses.len() < 3 {
        return Err(Error::InsufficientPulses {
            found: pulses.len(),
            required: 3,
        });
    }
    let durations: Vec<f64> = pulses.iter().map(|p| p.duration).collect();
    let amps: Vec<f64> = pulses.iter().map(|p| p.pulse_amp).collect();
    let med_d = median(&durations);
    let mean_a = amps.iter().sum::<f64>() / amps.len() as f64;
    let med_a = median(&amps);
    let deviations: Vec<f64> = amps.iter().map(|a| (a - med_a).abs()).collect();
    let mad = median(&deviations);

    Ok(pulses
        .iter()
        .map(|p| {
            let bad_duration = p.duration < med_d - tolerance_s || p.duration > med_d + tolerance_s;
            let bad_amp = mad > 0.0 && modified_z_score(p.pulse_amp, mean_a, mad) > mz_threshold;
            PulseSegment {
                is_outlier: bad_duration || bad_amp,
                ..p.clone()
            }
        })
        .collect())
}

/// [`flag_outliers_with`] at ±0.3 s and MZ > 10.
pub fn flag_outliers(pulses: &[PulseSegment]) -> Result<Vec<PulseSegment>> {
    flag_outliers_with(pulses, 0.3, 10.0)
}

/// Divides the waveform and pulse amplitudes by the largest non-outlier
/// pulse amplitude.
pub fn normalize_omw(
    omw: &OscillometricWaveform,
    pulses: &[PulseSegment],
) -> Result<(OscillometricWaveform, Vec<PulseSegment>)> {
    let scale = pulses
        .iter()
        .filter(|p| !p.is_outlier)
        .map(|p| p.pulse_amp.abs())
        .fold(0.0f64, f64::max);
    if !(scale > 0.0) {
        return Err(Error::DegenerateWaveform(
            "no non-outlier pulse with positive amplitude".into(),
        ));
    }
    let omw = OscillometricWaveform {
        samples: omw.samples.iter().map(|v| v / scale).collect(),
        slow_component: omw.slow_component.clone(),
        sampling_rate: omw.sampling_rate,
    };
    let pulses = pulses
        .iter()
        .map(|p| PulseSegment {
            peak_amp: p.peak_amp / scale,
            trough_amp: p.trough_amp / scale,
            pulse_amp: p.pulse_amp / scale,
            ..p.clone()
        })
        .collect();
    Ok((omw, pulses))
}

/// Output of the full preprocessing chain for one record.
#[derive(Debug, Clone)]
pub struct PreparedWaveform {
    pub record: CuffDeflationRecord,
    /// Denoised and normalized.
    pub omw: OscillometricWaveform,
    pub peaks: Vec<usize>,
    pub pulses: Vec<PulseSegment>,
}

impl PreparedWaveform {
    pub fn outlier_count(&self) -> usize {
        self.pulses.iter().filter(|p| p.is_outlier).count()
    }
}

/// Resample, split, denoise, detect, segment, flag and normalize.
pub fn preprocess(record: &CuffDeflationRecord, config: &PrepConfig) -> Result<PreparedWaveform> {
    config.validate()?;
    let record = record.resampled(config.working_rate_hz)?;
    let omw = split_components(&record, config.hp_cutoff_hz, config.hp_order)?;
    let omw = denoise_with(&omw, config.lp_order, config.lp_cutoff_hz)?;
    let peaks = detect_peaks(&omw, config.ampd_window_s, config.peak_dedup_s)?;
    let pulses = segment_pulses(&omw, &peaks, config.trough_half_width)?;
    let pulses = flag_outliers_with(&pulses, config.duration_tolerance_s, config.mz_threshold)?;
    let (omw, pulses) = normalize_omw(&omw, &pulses)?;
    Ok(PreparedWaveform {
        record,
        omw,
        peaks,
        pulses,
    })
}

#[cfg(test)]
mod tests;
