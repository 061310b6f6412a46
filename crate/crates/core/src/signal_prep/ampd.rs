//! Automatic multiscale-based peak detection (local-maxima scalogram).

/// Subtract the least-squares line.
fn detrend(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean_t = (n - 1.0) / 2.0;
    let mean_x = x.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let dt = i as f64 - mean_t;
        sxy += dt * (v - mean_x);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter()
        .enumerate()
        .map(|(i, &v)| v - mean_x - slope * (i as f64 - mean_t))
        .collect()
}

/// Runs AMPD on `x` and returns the indices that are maxima at every scale
/// `1..=λ`, where `λ` minimizes the row sums of the scalogram over
/// `min_scale..=L`.
///
/// Scale selection treats out-of-range neighbours as "not a maximum".
/// Peak extraction accepts a one-sided comparison where the other side falls
/// outside the signal, so beats close to either end are not lost.
pub fn ampd(x: &[f64], min_scale: usize) -> Vec<usize> {
    let n = x.len();
    if n < 3 {
        return Vec::new();
    }
    let x = detrend(x);
    let max_scale = n.div_ceil(2) - 1;
    if max_scale == 0 {
        return Vec::new();
    }
    let min_scale = min_scale.clamp(1, max_scale);

    let mut best_scale = min_scale;
    let mut best_gamma = usize::MAX;
    for k in min_scale..=max_scale {
        // Non-maxima count: everything except interior points beating both neighbours.
        let maxima = (k..n - k)
            .filter(|&i| x[i] > x[i - k] && x[i] > x[i + k])
            .count();
        let gamma = n - maxima;
        if gamma < best_gamma {
            best_gamma = gamma;
            best_scale = k;
        }
    }

    (0..n)
        .filter(|&i| {
            (1..=best_scale).all(|k| {
                let left = i < k || x[i] > x[i - k];
                let right = i + k >= n || x[i] > x[i + k];
                left && right
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn detrend_removes_line() {
        let x: Vec<f64> = (0..50).map(|i| 3.0 - 0.25 * i as f64).collect();
        assert!(detrend(&x).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn finds_sinusoid_maxima() {
        let x: Vec<f64> = (0..500)
            .map(|i| (2.0 * PI * i as f64 / 50.0).sin())
            .collect();
        let peaks = ampd(&x, 5);
        assert_eq!(peaks.len(), 10);
        for (j, &p) in peaks.iter().enumerate() {
            let expected = 12.5 + 50.0 * j as f64;
            assert!((p as f64 - expected).abs() <= 1.0);
        }
    }

    #[test]
    fn constant_signal_has_no_peaks() {
        assert!(ampd(&[2.0; 200], 3).is_empty());
    }

    #[test]
    fn min_scale_suppresses_small_ripples() {
        // Small ripple riding on a slow sinusoid.
        let x: Vec<f64> = (0..600)
            .map(|i| {
                let t = i as f64;
                (2.0 * PI * t / 100.0).sin() + 0.05 * (2.0 * PI * t / 7.0).sin()
            })
            .collect();
        let peaks = ampd(&x, 20);
        assert_eq!(peaks.len(), 6);
    }
}
