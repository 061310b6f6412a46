//! Butterworth filters realized as cascaded biquads, applied forward-backward.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    LowPass,
    HighPass,
}

/// Second-order section in transposed direct form II, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State that leaves the section at rest for a constant input `u`.
    fn steady_state(&self, u: f64) -> [f64; 2] {
        let y = self.dc_gain() * u;
        let z2 = self.b[2] * u - self.a[1] * y;
        let z1 = self.b[1] * u - self.a[0] * y + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let u = *v;
            let y = b0 * u + z[0];
            z[0] = b1 * u - a1 * y + z[1];
            z[1] = b2 * u - a2 * y;
            *v = y;
        }
    }
}

/// Digital Butterworth filter obtained by the bilinear transform with
/// prewarping at the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    band: Band,
    order: usize,
    cutoff_hz: f64,
    sampling_rate: f64,
    sections: Vec<Biquad>,
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff_hz: f64, sampling_rate: f64) -> Result<Self> {
        Self::design(Band::LowPass, order, cutoff_hz, sampling_rate)
    }

    pub fn highpass(order: usize, cutoff_hz: f64, sampling_rate: f64) -> Result<Self> {
        Self::design(Band::HighPass, order, cutoff_hz, sampling_rate)
    }

    pub fn design(band: Band, order: usize, cutoff_hz: f64, sampling_rate: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidConfig("filter order must be positive".into()));
        }
        if !(sampling_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sampling rate must be positive, got {sampling_rate}"
            )));
        }
        if !(cutoff_hz > 0.0 && cutoff_hz < sampling_rate / 2.0) {
            return Err(Error::InvalidConfig(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
                sampling_rate / 2.0
            )));
        }
        let w0 = 2.0 * PI * cutoff_hz / sampling_rate;
        let (sin_w, cos_w) = w0.sin_cos();
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for k in 1..=order / 2 {
            // Conjugate pole pair at angle theta from the imaginary axis.
            let theta = PI * (2 * k - 1) as f64 / (2 * order) as f64;
            let q = 1.0 / (2.0 * theta.sin());
            let alpha = sin_w / (2.0 * q);
            let a0 = 1.0 + alpha;
            let b = match band {
                Band::LowPass => [(1.0 - cos_w) / 2.0, 1.0 - cos_w, (1.0 - cos_w) / 2.0],
                Band::HighPass => [(1.0 + cos_w) / 2.0, -(1.0 + cos_w), (1.0 + cos_w) / 2.0],
            };
            sections.push(Biquad {
                b: [b[0] / a0, b[1] / a0, b[2] / a0],
                a: [-2.0 * cos_w / a0, (1.0 - alpha) / a0],
            });
        }
        if order % 2 == 1 {
            let k = (w0 / 2.0).tan();
            let a1 = (k - 1.0) / (k + 1.0);
            let b = match band {
                Band::LowPass => [k / (1.0 + k), k / (1.0 + k), 0.0],
                Band::HighPass => [1.0 / (1.0 + k), -1.0 / (1.0 + k), 0.0],
            };
            sections.push(Biquad { b, a: [a1, 0.0] });
        }
        Ok(Self {
            band,
            order,
            cutoff_hz,
            sampling_rate,
            sections,
        })
    }

    pub fn band(&self) -> Band {
        self.band
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Single-pass magnitude response at `freq_hz`, evaluated from the
    /// designed coefficients.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sampling_rate;
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        self.sections.iter().fold(1.0, |acc, s| {
            let num = (
                s.b[0] + s.b[1] * z1.0 + s.b[2] * z2.0,
                s.b[1] * z1.1 + s.b[2] * z2.1,
            );
            let den = (1.0 + s.a[0] * z1.0 + s.a[1] * z2.0, s.a[0] * z1.1 + s.a[1] * z2.1);
            acc * (num.0.hypot(num.1) / den.0.hypot(den.1))
        })
    }

    /// Samples needed for the response to settle: three cutoff periods.
    pub fn settle_samples(&self) -> usize {
        (3.0 * self.sampling_rate / self.cutoff_hz).ceil() as usize
    }

    /// Minimum input length accepted by [`Butterworth::filtfilt`]: one cutoff period.
    pub fn min_len(&self) -> usize {
        ((self.sampling_rate / self.cutoff_hz).ceil() as usize).max(2 * self.order + 2)
    }

    fn run_cascade(&self, x: &mut [f64]) {
        let mut u = x[0];
        for s in &self.sections {
            let zi = s.steady_state(u);
            u *= s.dc_gain();
            s.run(x, zi);
        }
    }

    /// Zero-phase filtering: odd extension at both ends, steady-state
    /// initial conditions, forward pass, then backward pass.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        if n < self.min_len() {
            return Err(Error::ShortRecord {
                samples: n,
                required: self.min_len(),
            });
        }
        let pad = self.settle_samples().min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        self.run_cascade(&mut ext);
        ext.reverse();
        self.run_cascade(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}
