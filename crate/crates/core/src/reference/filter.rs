//! Zero-phase second-order Butterworth low-pass.

use std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    pub fn butterworth_lowpass(cutoff: f64, sample_rate: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff / sample_rate).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        let b0 = k * k * norm;
        Self { b: [b0, 2.0 * b0, b0], a: [2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm] }
    }

    /// Direct form I with the state initialized at steady state for `x[0]`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let Some(&x0) = x.first() else { return Vec::new() };
        let (mut x1, mut x2, mut y1, mut y2) = (x0, x0, x0, x0);
        x.iter()
            .map(|&xn| {
                let y = self.b[0] * xn + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = xn;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

/// Forward–backward filtering with odd reflection at both ends.
pub fn filtfilt(x: &[f64], cutoff: f64, dt: f64) -> Vec<f64> {
    let n = x.len();
    if n < 3 {
        return x.to_vec();
    }
    let fs = 1.0 / dt;
    let filter = Biquad::butterworth_lowpass(cutoff, fs);
    let pad = ((6.0 * fs / cutoff).ceil() as usize).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    let mut y = filter.apply(&ext);
    y.reverse();
    let mut y = filter.apply(&y);
    y.reverse();
    y[pad..pad + n].to_vec()
}
