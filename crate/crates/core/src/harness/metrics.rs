//! Reward post-processing for reporting: min-max normalization and
//! zero-phase low-pass smoothing. Never fed back into training.

use std::f64::consts::{PI, SQRT_2};

use super::HarnessError;

/// Default normalized cutoff (fraction of Nyquist).
pub const DEFAULT_CUTOFF: f64 = 0.02;

/// Shortest series [`smooth_rewards`] accepts is one longer than this.
pub const SMOOTH_PADLEN: usize = 9;

/// `(r - min) / (max - min)`; a constant series maps to all zeros.
pub fn normalize_rewards(rewards: &[f64]) -> Vec<f64> {
    let lo = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - lo) / span).collect()
}

/// Second-order Butterworth low-pass, coefficients `(b, a)` with `a[0] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Bilinear-transform design for cutoff `wn` in (0, 1), relative to Nyquist.
    pub fn butterworth_lowpass(wn: f64) -> Result<Self, HarnessError> {
        if !(wn > 0.0 && wn < 1.0) {
            return Err(HarnessError::Config(format!("smoothing cutoff must lie in (0, 1), got {wn}")));
        }
        let k = (PI * wn / 2.0).tan();
        let k2 = k * k;
        let den = 1.0 + SQRT_2 * k + k2;
        let b0 = k2 / den;
        Ok(Self {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k2 - 1.0) / den, (1.0 - SQRT_2 * k + k2) / den],
        })
    }

    /// Transposed direct form II, starting from the steady state of a
    /// constant input equal to `x[0]`.
    fn filter(&self, x: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let x0 = x.first().copied().unwrap_or(0.0);
        let mut z1 = (b2 - a2) * x0;
        let mut z0 = (b1 - a1) * x0 + z1;
        x.iter()
            .map(|&xi| {
                let y = b0 * xi + z0;
                z0 = b1 * xi - a1 * y + z1;
                z1 = b2 * xi - a2 * y;
                y
            })
            .collect()
    }

    /// Forward-backward filtering with `padlen` mirrored samples at each end
    /// (clamped to the series length). Mirroring keeps the local level of a
    /// noisy series, where an odd extension would pivot on a single sample.
    pub fn filtfilt(&self, x: &[f64], padlen: usize) -> Result<Vec<f64>, HarnessError> {
        let n = x.len();
        if n <= SMOOTH_PADLEN {
            return Err(HarnessError::SeriesTooShort { len: n, min: SMOOTH_PADLEN + 1 });
        }
        let p = padlen.clamp(1, n - 1);
        let mut ext = Vec::with_capacity(n + 2 * p);
        ext.extend((1..=p).rev().map(|i| x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=p).map(|i| x[n - 1 - i]));
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        Ok(y[p..p + n].to_vec())
    }
}

/// Zero-phase low-pass smoothing with a second-order Butterworth filter.
/// Edges are padded by about three filter time constants.
pub fn smooth_rewards(series: &[f64], cutoff: f64) -> Result<Vec<f64>, HarnessError> {
    let filter = Biquad::butterworth_lowpass(cutoff)?;
    let padlen = ((3.0 / cutoff).ceil() as usize).max(SMOOTH_PADLEN);
    filter.filtfilt(series, padlen)
}
