//! Labeled synthetic cuff-deflation recordings and a fixed-ratio
//! maximum-amplitude oracle.
//!
//! A record is a linear deflation ramp plus a train of raised-cosine beats
//! whose amplitudes follow an asymmetric Gaussian envelope in cuff pressure.
//! The envelope widths are solved from the drawn SBP/DBP so that the
//! systolic and diastolic amplitude ratios are met exactly at the labels.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_prep::{CuffDeflationRecord, PulseSegment};
use crate::trainer::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohortConfig {
    pub n_subjects: usize,
    pub records_per_subject: usize,
    /// mmHg, inclusive.
    pub sbp_range: (f64, f64),
    pub dbp_range: (f64, f64),
    /// Beats per minute.
    pub heart_rate_range: (f64, f64),
    /// mmHg/s.
    pub deflation_rate: f64,
    /// Envelope width below MAP over width above MAP.
    pub envelope_asymmetry: f64,
    /// Peak pulse amplitude range, mmHg.
    pub amplitude_range: (f64, f64),
    /// Additive white noise, mmHg.
    pub noise_sd: f64,
    /// Mean number of artifact beats per record.
    pub artifact_rate: f64,
    pub sampling_rate: f64,
    /// Amplitude ratios at SBP and DBP.
    pub sys_ratio: f64,
    pub dia_ratio: f64,
    pub seed: u64,
}

impl Default for SyntheticCohortConfig {
    fn default() -> Self {
        Self {
            n_subjects: 20,
            records_per_subject: 3,
            sbp_range: (78.0, 199.0),
            dbp_range: (36.0, 104.0),
            heart_rate_range: (60.0, 90.0),
            deflation_rate: 3.0,
            envelope_asymmetry: 1.5,
            amplitude_range: (1.5, 3.0),
            noise_sd: 0.0,
            artifact_rate: 0.0,
            sampling_rate: 100.0,
            sys_ratio: 0.55,
            dia_ratio: 0.75,
            seed: 0,
        }
    }
}

/// Smallest pulse pressure the generator draws.
pub const MIN_PULSE_PRESSURE: f64 = 25.0;

/// Artifacts are placed only on beats whose envelope amplitude is at least
/// this fraction of the maximum.
pub const ARTIFACT_MIN_ENVELOPE: f64 = 0.25;

/// Beats at each end of a record that never carry artifacts.
pub const ARTIFACT_EDGE_BEATS: usize = 5;

/// Largest per-record label jitter, mmHg.
pub const RECORD_JITTER: f64 = 3.0;

impl SyntheticCohortConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        for (name, r) in [
            ("sbp_range", self.sbp_range),
            ("dbp_range", self.dbp_range),
            ("heart_rate_range", self.heart_rate_range),
            ("amplitude_range", self.amplitude_range),
        ] {
            if !range_ok(r) {
                return bad(format!("{name} must be positive and ordered, got {r:?}"));
            }
        }
        if self.sbp_range.1 < self.dbp_range.0 + MIN_PULSE_PRESSURE
            || self.sbp_range.0 <= self.dbp_range.0
            || self.sbp_range.1 <= self.dbp_range.1
        {
            return bad(format!(
                "sbp_range {:?} must lie above dbp_range {:?}",
                self.sbp_range, self.dbp_range
            ));
        }
        if self.n_subjects == 0 || self.records_per_subject == 0 {
            return bad("cohort must contain at least one record".into());
        }
        for (name, v) in [
            ("deflation_rate", self.deflation_rate),
            ("envelope_asymmetry", self.envelope_asymmetry),
            ("sampling_rate", self.sampling_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.noise_sd >= 0.0 && self.artifact_rate >= 0.0) {
            return bad("noise_sd and artifact_rate must be non-negative".into());
        }
        for (name, r) in [("sys_ratio", self.sys_ratio), ("dia_ratio", self.dia_ratio)] {
            if !(r > 0.0 && r < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {r}"));
            }
        }
        if self.sampling_rate < 4.0 * self.heart_rate_range.1 / 60.0 {
            return bad("sampling_rate too low for the heart rate range".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArtifactKind {
    /// Beat amplitude set to 15 times the envelope maximum.
    Amplitude,
    /// Beat lasts twice as long.
    Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub subject_id: String,
    pub record_id: String,
    pub sbp: f64,
    pub dbp: f64,
    pub map: f64,
    /// Peak time of every beat inside the record, seconds.
    pub beat_times: Vec<f64>,
    /// Indices into `beat_times`.
    pub injected_artifact_indices: Vec<usize>,
    pub artifact_kinds: Vec<ArtifactKind>,
    pub amplitude_max: f64,
    pub sigma_upper: f64,
    pub sigma_lower: f64,
    pub start_pressure: f64,
    pub end_pressure: f64,
    pub deflation_rate: f64,
}

impl SyntheticTruth {
    /// Pulse amplitude the envelope assigns to a cuff pressure.
    pub fn envelope(&self, pressure: f64) -> f64 {
        let sigma = if pressure >= self.map {
            self.sigma_upper
        } else {
            self.sigma_lower
        };
        self.amplitude_max * (-(pressure - self.map).powi(2) / (2.0 * sigma * sigma)).exp()
    }

    /// Deflation ramp without oscillations.
    pub fn cuff_pressure(&self, t: f64) -> f64 {
        self.start_pressure - self.deflation_rate * t
    }
}

/// `√(−2 ln r)`: distance from the envelope peak, in widths, at which the
/// amplitude falls to `r` of its maximum.
fn ratio_distance(r: f64) -> f64 {
    (-2.0 * r.ln()).sqrt()
}

/// Envelope `(map, sigma_upper, sigma_lower)` meeting both ratios exactly.
pub fn envelope_for(sbp: f64, dbp: f64, config: &SyntheticCohortConfig) -> (f64, f64, f64) {
    let ks = ratio_distance(config.sys_ratio);
    let kd = ratio_distance(config.dia_ratio);
    let sigma_upper = (sbp - dbp) / (ks + config.envelope_asymmetry * kd);
    (
        sbp - sigma_upper * ks,
        sigma_upper,
        config.envelope_asymmetry * sigma_upper,
    )
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Subject-level labels: DBP first, then SBP at least
/// [`MIN_PULSE_PRESSURE`] above it.
pub fn draw_subject_bp(config: &SyntheticCohortConfig, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let dbp_hi = config.dbp_range.1.min(config.sbp_range.1 - MIN_PULSE_PRESSURE);
    let dbp = uniform(rng, (config.dbp_range.0, dbp_hi));
    let sbp_lo = config.sbp_range.0.max(dbp + MIN_PULSE_PRESSURE);
    let sbp = uniform(rng, (sbp_lo, config.sbp_range.1));
    (sbp, dbp)
}

/// One record with the given labels, deterministic per `seed`.
pub fn generate_record_with(
    config: &SyntheticCohortConfig,
    (sbp, dbp): (f64, f64),
    subject_id: &str,
    record_id: &str,
    seed: u64,
) -> Result<(CuffDeflationRecord, SyntheticTruth)> {
    config.validate()?;
    if !(sbp > dbp && dbp > 0.0) {
        return Err(Error::InvalidConfig(format!("labels {sbp}/{dbp} are inconsistent")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = config.sampling_rate;
    let start = sbp + 30.0;
    let end = (dbp - 20.0).max(20.0);
    let duration = (start - end) / config.deflation_rate;
    let n = (duration * fs).floor() as usize + 1;
    let (map, sigma_upper, sigma_lower) = envelope_for(sbp, dbp, config);
    let hr = uniform(&mut rng, config.heart_rate_range);
    let amplitude_max = uniform(&mut rng, config.amplitude_range);
    let mut truth = SyntheticTruth {
        subject_id: subject_id.to_string(),
        record_id: record_id.to_string(),
        sbp,
        dbp,
        map,
        beat_times: Vec::new(),
        injected_artifact_indices: Vec::new(),
        artifact_kinds: Vec::new(),
        amplitude_max,
        sigma_upper,
        sigma_lower,
        start_pressure: start,
        end_pressure: end,
        deflation_rate: config.deflation_rate,
    };

    // Beat onsets with ±3% period jitter, the first at a random phase.
    let period = 60.0 / hr;
    let mut onsets = vec![-rng.random_range(0.0..period)];
    let mut periods = Vec::new();
    loop {
        let p = period * (1.0 + rng.random_range(-0.03..0.03));
        periods.push(p);
        let next = onsets[onsets.len() - 1] + p;
        if next >= duration {
            break;
        }
        onsets.push(next);
    }
    let inside: Vec<usize> = (0..onsets.len())
        .filter(|&k| {
            let peak = onsets[k] + periods[k] / 2.0;
            (0.0..duration).contains(&peak)
        })
        .collect();

    let mut artifact_of_beat = vec![None; onsets.len()];
    if config.artifact_rate > 0.0 && inside.len() > 2 * ARTIFACT_EDGE_BEATS {
        let count = Poisson::new(config.artifact_rate)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .sample(&mut rng) as usize;
        // Only beats on the main lobe of the envelope: near the record ends
        // the true beats are too small to survive next to an artifact.
        let mut pool: Vec<usize> = inside[ARTIFACT_EDGE_BEATS..inside.len() - ARTIFACT_EDGE_BEATS]
            .iter()
            .copied()
            .filter(|&k| {
                let peak_t = onsets[k] + periods[k] / 2.0;
                truth.envelope(start - config.deflation_rate * peak_t) >= ARTIFACT_MIN_ENVELOPE * amplitude_max
            })
            .collect();
        for _ in 0..count.min(pool.len()) {
            let k = pool.swap_remove(rng.random_range(0..pool.len()));
            let kind = if rng.random_bool(0.5) {
                ArtifactKind::Amplitude
            } else {
                ArtifactKind::Duration
            };
            artifact_of_beat[k] = Some(kind);
        }
    }

    // Stretched beats push every later onset back.
    let mut shift = 0.0;
    let mut beats = Vec::with_capacity(onsets.len());
    for k in 0..onsets.len() {
        let mut len = periods[k];
        if artifact_of_beat[k] == Some(ArtifactKind::Duration) {
            len *= 2.0;
        }
        let onset = onsets[k] + shift;
        shift += len - periods[k];
        if onset >= duration {
            break;
        }
        let peak_t = onset + len / 2.0;
        let amp = match artifact_of_beat[k] {
            Some(ArtifactKind::Amplitude) => 15.0 * amplitude_max,
            _ => truth.envelope(start - config.deflation_rate * peak_t),
        };
        beats.push((onset, len, amp));
        if (0.0..duration).contains(&peak_t) {
            if let Some(kind) = artifact_of_beat[k] {
                truth.injected_artifact_indices.push(truth.beat_times.len());
                truth.artifact_kinds.push(kind);
            }
            truth.beat_times.push(peak_t);
        }
    }

    let mut samples: Vec<f64> = (0..n).map(|i| start - config.deflation_rate * i as f64 / fs).collect();
    for &(onset, len, amp) in &beats {
        let first = (onset * fs).ceil().max(0.0) as usize;
        let last = (((onset + len) * fs).ceil() as usize).min(n);
        for (i, s) in samples.iter_mut().enumerate().take(last).skip(first) {
            let phase = (i as f64 / fs - onset) / len;
            *s += amp * 0.5 * (1.0 - (2.0 * PI * phase).cos());
        }
    }
    if config.noise_sd > 0.0 {
        let noise = Normal::new(0.0, config.noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for s in &mut samples {
            *s += noise.sample(&mut rng);
        }
    }
    let record = CuffDeflationRecord::new(subject_id, record_id, fs, samples, sbp, dbp)?;
    Ok((record, truth))
}

/// One record with labels drawn from `seed`.
pub fn generate_record(
    config: &SyntheticCohortConfig,
    seed: u64,
) -> Result<(CuffDeflationRecord, SyntheticTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX, 0));
    let labels = draw_subject_bp(config, &mut rng);
    generate_record_with(config, labels, "S000", "R1", seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub records: Vec<CuffDeflationRecord>,
    pub truth: Vec<SyntheticTruth>,
}

/// `n_subjects × records_per_subject` records. Each subject's labels are
/// drawn once and jittered by up to ±3 mmHg per record, clamped to the
/// configured ranges.
pub fn generate_cohort(config: &SyntheticCohortConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let width = config.n_subjects.to_string().len().max(2);
    let mut cohort = SyntheticCohort {
        records: Vec::new(),
        truth: Vec::new(),
    };
    for s in 0..config.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, s as u64, u64::MAX));
        let (sbp, dbp) = draw_subject_bp(config, &mut rng);
        let subject_id = format!("S{s:0width$}");
        for r in 0..config.records_per_subject {
            let mut jitter = || rng.random_range(-RECORD_JITTER..=RECORD_JITTER);
            let rec_sbp = (sbp + jitter()).clamp(config.sbp_range.0, config.sbp_range.1);
            let rec_dbp = (dbp + jitter()).clamp(config.dbp_range.0, config.dbp_range.1);
            let (record, truth) = generate_record_with(
                config,
                (rec_sbp, rec_dbp),
                &subject_id,
                &format!("R{}", r + 1),
                derive_seed(config.seed, s as u64, r as u64),
            )?;
            cohort.records.push(record);
            cohort.truth.push(truth);
        }
    }
    Ok(cohort)
}

/// CSV `subject_id,record_id,sbp,dbp,map`.
pub fn write_truth_csv<W: Write>(mut w: W, truth: &[SyntheticTruth]) -> Result<()> {
    writeln!(w, "subject_id,record_id,sbp,dbp,map")?;
    for t in truth {
        writeln!(w, "{},{},{:?},{:?},{:?}", t.subject_id, t.record_id, t.sbp, t.dbp, t.map)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaaEstimate {
    pub sbp: f64,
    pub dbp: f64,
    pub map: f64,
}

/// Fixed-ratio estimates from envelope points `(pressure, amplitude)` in
/// any order. MAP is the pressure of the largest amplitude; SBP and DBP are
/// the first crossings of `ratio × max` above and below it, linearly
/// interpolated between neighbouring points.
pub fn maa_from_envelope(points: &[(f64, f64)], sys_ratio: f64, dia_ratio: f64) -> Result<MaaEstimate> {
    if points.is_empty() {
        return Err(Error::InsufficientData("empty envelope".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (peak, &(map, max)) = pts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty");
    let crossing = |idx: &mut dyn Iterator<Item = usize>, ratio: f64, side| {
        let thr = ratio * max;
        let mut prev: Option<(f64, f64)> = None;
        for i in idx {
            let (p, a) = pts[i];
            if a <= thr {
                return Ok(match prev {
                    Some((p0, a0)) => p0 + (a0 - thr) / (a0 - a) * (p - p0),
                    None => p,
                });
            }
            prev = Some((p, a));
        }
        Err(Error::RatioNotReached { ratio, side })
    };
    let sbp = crossing(&mut (peak..pts.len()), sys_ratio, "systolic")?;
    let dbp = crossing(&mut (0..=peak).rev(), dia_ratio, "diastolic")?;
    Ok(MaaEstimate { sbp, dbp, map })
}

/// [`maa_from_envelope`] over non-outlier pulses, each placed at the slow
/// cuff pressure of its peak.
pub fn maa_oracle(
    pulses: &[PulseSegment],
    slow: &[f64],
    sys_ratio: f64,
    dia_ratio: f64,
) -> Result<MaaEstimate> {
    let points: Vec<(f64, f64)> = pulses
        .iter()
        .filter(|p| !p.is_outlier)
        .map(|p| (slow[p.peak_index], p.pulse_amp))
        .collect();
    maa_from_envelope(&points, sys_ratio, dia_ratio)
}
