use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;

fn record(samples: Vec<f64>, fs: f64) -> CuffDeflationRecord {
    CuffDeflationRecord::new("s1", "r1", fs, samples, 120.0, 80.0).unwrap()
}

fn waveform(samples: Vec<f64>, fs: f64) -> OscillometricWaveform {
    let n = samples.len();
    OscillometricWaveform {
        samples,
        slow_component: vec![100.0; n],
        sampling_rate: fs,
    }
}

fn ramp(t: f64) -> f64 {
    150.0 - 2.5 * t
}

fn pulse(duration: f64, amp: f64) -> PulseSegment {
    PulseSegment {
        start_index: 0,
        end_index: 1,
        peak_index: 0,
        peak_amp: amp,
        trough_amp: 0.0,
        pulse_amp: amp,
        duration,
        is_outlier: false,
        trough_fallback: false,
    }
}

/// Brute-force oracle: every strict local maximum.
fn local_maxima(x: &[f64]) -> Vec<usize> {
    (1..x.len() - 1)
        .filter(|&i| x[i] > x[i - 1] && x[i] > x[i + 1])
        .collect()
}

#[test]
fn record_invariants_are_enforced() {
    assert!(CuffDeflationRecord::new("s", "r", 100.0, vec![0.0; 999], 120.0, 80.0).is_err());
    assert!(CuffDeflationRecord::new("s", "r", 0.0, vec![0.0; 1000], 120.0, 80.0).is_err());
    assert!(CuffDeflationRecord::new("s", "r", 100.0, vec![0.0; 1000], 80.0, 120.0).is_err());
    assert!(CuffDeflationRecord::new("s", "r", 100.0, vec![0.0; 1000], 120.0, 80.0).is_ok());
}

#[test]
fn resampling_reproduces_a_line() {
    let fs = 250.0;
    let r = record((0..5000).map(|i| ramp(i as f64 / fs)).collect(), fs);
    let out = r.resampled(100.0).unwrap();
    assert_eq!(out.sampling_rate, 100.0);
    assert_eq!(out.samples.len(), 2000);
    for (j, v) in out.samples.iter().enumerate() {
        assert!((v - ramp(j as f64 / 100.0)).abs() < 1e-9);
    }
}

#[test]
fn ramp_without_pulses_has_no_oscillation() {
    let fs = 100.0;
    let r = record((0..4000).map(|i| ramp(i as f64 / fs)).collect(), fs);
    let omw = split_components(&r, 0.3, 2).unwrap();
    let edge = (2.0 * fs) as usize;
    for v in &omw.samples[edge..4000 - edge] {
        assert!(v.abs() < 0.05, "{v}");
    }
}

#[test]
fn ramp_plus_sinusoid_is_separated() {
    let fs = 100.0;
    let samples = (0..4000)
        .map(|i| {
            let t = i as f64 / fs;
            ramp(t) + (2.0 * PI * t).sin()
        })
        .collect();
    let r = record(samples, fs);
    let omw = split_components(&r, 0.3, 2).unwrap();
    let edge = 500;
    let amp = omw.samples[edge..4000 - edge]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((amp - 1.0).abs() < 0.05, "amplitude {amp}");
    for i in edge..4000 - edge {
        let expected = ramp(i as f64 / fs);
        assert!((omw.slow_component[i] - expected).abs() < 0.02 * expected);
    }
}

#[test]
fn components_reconstruct_the_record() {
    let fs = 100.0;
    let samples: Vec<f64> = (0..3000)
        .map(|i| {
            let t = i as f64 / fs;
            ramp(t) + 0.8 * (2.0 * PI * 1.3 * t).sin() + 0.1 * (2.0 * PI * 7.0 * t).cos()
        })
        .collect();
    let r = record(samples.clone(), fs);
    let omw = split_components(&r, 0.3, 2).unwrap();
    for i in 0..samples.len() {
        assert!((omw.samples[i] + omw.slow_component[i] - samples[i]).abs() < 1e-9);
    }
}

#[test]
fn split_rejects_bad_cutoff() {
    let r = record(vec![100.0; 1000], 100.0);
    assert!(matches!(split_components(&r, 50.0, 2), Err(Error::InvalidConfig(_))));
    assert!(matches!(split_components(&r, 80.0, 2), Err(Error::InvalidConfig(_))));
}

#[test]
fn split_rejects_record_shorter_than_filter_transient() {
    let r = record(vec![100.0; 1000], 100.0);
    assert!(matches!(
        split_components(&r, 0.05, 2),
        Err(Error::ShortRecord { .. })
    ));
}

#[test]
fn denoise_zero_is_zero() {
    let out = denoise(&waveform(vec![0.0; 1000], 100.0)).unwrap();
    assert!(out.samples.iter().all(|&v| v == 0.0));
}

#[test]
fn denoise_passes_one_hertz() {
    let fs = 100.0;
    let x = (0..3000).map(|i| (2.0 * PI * i as f64 / fs).sin()).collect();
    let out = denoise(&waveform(x, fs)).unwrap();
    let amp = out.samples[500..2500]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    // Analytic forward-backward gain at 1 Hz: 1 / (1 + 0.1^8).
    assert!(amp >= 0.999, "{amp}");
}

#[test]
fn denoise_attenuates_fifty_hertz() {
    let fs = 200.0;
    let x = (0..4000).map(|i| (2.0 * PI * 50.0 * i as f64 / fs).sin()).collect();
    let out = denoise(&waveform(x, fs)).unwrap();
    let amp = out.samples[500..3500]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    // 56 dB per pass, two passes.
    assert!(amp <= 10f64.powf(-112.0 / 20.0), "{amp}");
}

#[test]
fn denoise_leaves_slow_component_untouched() {
    let mut w = waveform((0..1000).map(|i| (i as f64 * 0.3).sin()).collect(), 100.0);
    w.slow_component = (0..1000).map(|i| 150.0 - i as f64 * 0.1).collect();
    let out = denoise(&w).unwrap();
    assert_eq!(out.slow_component, w.slow_component);
}

#[test]
fn denoise_requires_rate_above_twenty_hertz() {
    assert!(matches!(
        denoise(&waveform(vec![0.0; 1000], 20.0)),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn peaks_of_one_hertz_sinusoid() {
    let fs = 100.0;
    let x: Vec<f64> = (0..1000).map(|i| (2.0 * PI * i as f64 / fs).sin()).collect();
    let oracle = local_maxima(&x);
    let peaks = detect_peaks(&waveform(x, fs), 6.0, 0.2).unwrap();
    assert_eq!(peaks.len(), 10);
    assert_eq!(oracle.len(), 10);
    for (p, o) in peaks.iter().zip(&oracle) {
        assert!(p.abs_diff(*o) <= 1);
    }
}

#[test]
fn constant_signal_has_insufficient_pulses() {
    assert!(matches!(
        detect_peaks(&waveform(vec![1.0; 1000], 100.0), 6.0, 0.2),
        Err(Error::InsufficientPulses { .. })
    ));
}

#[test]
fn threshold_formula_hand_cases() {
    let cases = [
        (2.0, 0.0, 1.6),
        (1.0, -1.0, 1.6),
        (5.0, 0.0, 4.0),
        (0.5, 0.25, 0.2),
        (3.0, 3.0, 0.0),
    ];
    for (p, m, thr) in cases {
        assert!((trough_threshold(p, m) - thr).abs() < 1e-12);
    }
    assert!((2.0 - trough_threshold(2.0, 0.0) - 0.4).abs() < 1e-12);
}

#[test]
fn sinusoid_troughs_are_inter_peak_minima() {
    let fs = 100.0;
    let x: Vec<f64> = (0..1000).map(|i| (2.0 * PI * i as f64 / fs).sin()).collect();
    let minima: Vec<usize> = (1..x.len() - 1)
        .filter(|&i| x[i] < x[i - 1] && x[i] < x[i + 1])
        .collect();
    let w = waveform(x, fs);
    let peaks = detect_peaks(&w, 6.0, 0.2).unwrap();
    let pulses = segment_pulses(&w, &peaks, 5).unwrap();
    assert_eq!(pulses.len(), peaks.len() - 2);
    for p in &pulses {
        assert!(p.trough_fallback);
        assert!(minima.iter().any(|&m| m.abs_diff(p.start_index) <= 1));
    }
}

#[test]
fn trough_skips_to_notch_near_next_peak() {
    let mut x = vec![0.3; 66];
    x[0] = 2.0;
    x[20] = -0.5;
    x[40] = 0.1;
    x[41] = 0.05;
    x[42] = 0.2;
    for i in 43..50 {
        x[i] = 0.35 + 0.5 * (i - 43) as f64;
    }
    x[50] = 5.0;
    x[55] = 0.0;
    x[60] = 4.0;
    let w = waveform(x, 100.0);
    let pulses = segment_pulses(&w, &[0, 50, 60], 5).unwrap();
    // M_0 = -0.5 at 20, ceiling = 5 - 0.8 * 5.5 = 0.6. Baseline points are
    // candidates too, but the notch at 41 is closest to the next peak.
    assert_eq!(pulses.len(), 1);
    assert_eq!(pulses[0].start_index, 41);
    assert!(!pulses[0].trough_fallback);
    assert_eq!(pulses[0].end_index, 55);
    assert_eq!(pulses[0].peak_index, 50);
    assert!((pulses[0].pulse_amp - 4.95).abs() < 1e-12);
}

#[test]
fn pulses_tile_first_to_last_trough() {
    let fs = 100.0;
    let x: Vec<f64> = (0..2000)
        .map(|i| {
            let t = i as f64 / fs;
            (2.0 * PI * 1.1 * t).sin() + 0.3 * (2.0 * PI * 2.2 * t).sin()
        })
        .collect();
    let w = waveform(x, fs);
    let peaks = detect_peaks(&w, 6.0, 0.2).unwrap();
    let pulses = segment_pulses(&w, &peaks, 5).unwrap();
    let covered: Vec<usize> = pulses.iter().flat_map(|p| p.range()).collect();
    let expected: Vec<usize> =
        (pulses[0].start_index..pulses.last().unwrap().end_index).collect();
    assert_eq!(covered, expected);
    for p in &pulses {
        assert!(p.start_index <= p.peak_index && p.peak_index <= p.end_index);
        assert!(p.pulse_amp >= 0.0);
        assert_eq!(p.duration, (p.end_index - p.start_index) as f64 / fs);
    }
}

#[test]
fn duration_rule_flags_only_long_pulse() {
    let pulses: Vec<_> = [0.8, 0.8, 0.8, 1.2].iter().map(|&d| pulse(d, 1.0)).collect();
    let flagged = flag_outliers(&pulses).unwrap();
    let flags: Vec<bool> = flagged.iter().map(|p| p.is_outlier).collect();
    assert_eq!(flags, [false, false, false, true]);
}

#[test]
fn duration_rule_window_is_inclusive() {
    // Median 1.0; 0.7 and 1.3 sit exactly on the window edges.
    let pulses: Vec<_> = [1.0, 1.0, 1.0, 0.75, 1.25, 0.6, 1.4]
        .iter()
        .map(|&d| pulse(d, 1.0))
        .collect();
    let flags: Vec<bool> = flag_outliers(&pulses)
        .unwrap()
        .iter()
        .map(|p| p.is_outlier)
        .collect();
    assert_eq!(flags, [false, false, false, false, false, true, true]);
}

#[test]
fn modified_z_score_flags_only_fifty() {
    let amps = [1.0, 2.0, 3.0, 4.0, 50.0];
    assert!((modified_z_score(50.0, 12.0, 1.0) - 25.631).abs() < 1e-12);
    assert!((modified_z_score(4.0, 12.0, 1.0) - 0.6745 * -8.0).abs() < 1e-12);
    let pulses: Vec<_> = amps.iter().map(|&a| pulse(1.0, a)).collect();
    let flags: Vec<bool> = flag_outliers(&pulses)
        .unwrap()
        .iter()
        .map(|p| p.is_outlier)
        .collect();
    assert_eq!(flags, [false, false, false, false, true]);
}

#[test]
fn equal_amplitudes_skip_amplitude_rule() {
    let pulses: Vec<_> = (0..6).map(|_| pulse(1.0, 2.0)).collect();
    assert!(flag_outliers(&pulses).unwrap().iter().all(|p| !p.is_outlier));
}

#[test]
fn flagging_needs_three_pulses() {
    let pulses = vec![pulse(1.0, 1.0); 2];
    assert!(flag_outliers(&pulses).is_err());
}

#[test]
fn normalization_maps_max_amplitude_to_one() {
    let pulses: Vec<_> = [1.0, 2.5, 0.5].iter().map(|&a| pulse(1.0, a)).collect();
    let w = waveform(vec![0.5, -2.5, 1.0], 100.0);
    let (w2, p2) = normalize_omw(&w, &pulses).unwrap();
    let max = p2.iter().map(|p| p.pulse_amp).fold(0.0, f64::max);
    assert_eq!(max, 1.0);
    assert_eq!(w2.samples, vec![0.2, -1.0, 0.4]);
    assert_eq!(p2[0].pulse_amp / p2[2].pulse_amp, 2.0);
}

#[test]
fn normalization_is_identity_at_unit_max() {
    let pulses: Vec<_> = [1.0, 0.25, 0.5].iter().map(|&a| pulse(1.0, a)).collect();
    let w = waveform(vec![0.3, -0.7, 1.0], 100.0);
    let (w2, p2) = normalize_omw(&w, &pulses).unwrap();
    assert_eq!(w2, w);
    assert_eq!(p2, pulses);
}

#[test]
fn normalization_ignores_outliers() {
    let mut pulses: Vec<_> = [1.0, 2.0, 40.0].iter().map(|&a| pulse(1.0, a)).collect();
    pulses[2].is_outlier = true;
    let (_, p2) = normalize_omw(&waveform(vec![0.0; 3], 100.0), &pulses).unwrap();
    assert_eq!(p2[1].pulse_amp, 1.0);
    assert_eq!(p2[2].pulse_amp, 20.0);
}

#[test]
fn all_zero_amplitudes_are_degenerate() {
    let pulses: Vec<_> = (0..3).map(|_| pulse(1.0, 0.0)).collect();
    assert!(matches!(
        normalize_omw(&waveform(vec![0.0; 3], 100.0), &pulses),
        Err(Error::DegenerateWaveform(_))
    ));
}

fn noisy_beats(seed: u64, n: usize) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let fs = 100.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let env = 1.0 + 0.5 * (2.0 * PI * 0.05 * t).sin();
            env * (0.5 - 0.5 * (2.0 * PI * 1.2 * t).cos()) + rng.random_range(-0.02..0.02)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn denoise_is_linear(seed in 0u64..1000, a in prop::sample::select(vec![-2.0, 0.5, 10.0])) {
        let x = noisy_beats(seed, 800);
        let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
        let y = denoise(&waveform(x, 100.0)).unwrap().samples;
        let ay = denoise(&waveform(ax, 100.0)).unwrap().samples;
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (u, v) in y.iter().zip(&ay) {
            prop_assert!((a * u - v).abs() <= 1e-9 * (a.abs() * scale));
        }
    }

    #[test]
    fn detected_peaks_are_strict_local_maxima(seed in 0u64..1000) {
        let x = noisy_beats(seed, 3000);
        let w = denoise(&waveform(x, 100.0)).unwrap();
        let oracle = local_maxima(&w.samples);
        let peaks = detect_peaks(&w, 6.0, 0.2).unwrap();
        prop_assert!(peaks.windows(2).all(|p| p[0] < p[1]));
        for p in &peaks {
            prop_assert!(oracle.binary_search(p).is_ok());
        }
    }

    #[test]
    fn non_fallback_troughs_obey_the_threshold(seed in 0u64..1000) {
        let x = noisy_beats(seed, 3000);
        let w = denoise(&waveform(x, 100.0)).unwrap();
        let peaks = detect_peaks(&w, 6.0, 0.2).unwrap();
        let pulses = segment_pulses(&w, &peaks, 5).unwrap();
        let x = &w.samples;
        for (k, p) in pulses.iter().enumerate() {
            let (p0, p1) = (peaks[k], peaks[k + 1]);
            let (m_pos, m_val) = (p0..=p1)
                .map(|i| (i, x[i]))
                .fold((p0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
            if p.trough_fallback {
                prop_assert_eq!(p.start_index, m_pos);
            } else {
                let ceiling = x[p1] - trough_threshold(x[p1], m_val);
                prop_assert!(x[p.start_index] < ceiling);
                prop_assert!(m_pos < p.start_index && p.start_index < p1);
            }
        }
    }

    #[test]
    fn outlier_flags_are_permutation_covariant(
        amps in prop::collection::vec(0.1f64..5.0, 3..20),
        durs in prop::collection::vec(0.5f64..1.5, 20),
        shift in 1usize..19,
    ) {
        let pulses: Vec<_> = amps.iter().zip(&durs).map(|(&a, &d)| pulse(d, a)).collect();
        let flags: Vec<bool> = flag_outliers(&pulses).unwrap().iter().map(|p| p.is_outlier).collect();
        let mut rotated = pulses.clone();
        let s = shift % rotated.len();
        rotated.rotate_left(s);
        let mut rflags: Vec<bool> = flag_outliers(&rotated).unwrap().iter().map(|p| p.is_outlier).collect();
        rflags.rotate_right(s);
        prop_assert_eq!(flags, rflags);
    }

    #[test]
    fn normalization_is_idempotent(amps in prop::collection::vec(0.01f64..10.0, 3..12)) {
        let pulses: Vec<_> = amps.iter().map(|&a| pulse(1.0, a)).collect();
        let w = waveform(amps.iter().map(|a| a - 1.0).collect(), 100.0);
        let once = normalize_omw(&w, &pulses).unwrap();
        let twice = normalize_omw(&once.0, &once.1).unwrap();
        prop_assert_eq!(once.0, twice.0);
        prop_assert_eq!(once.1, twice.1);
    }
}
