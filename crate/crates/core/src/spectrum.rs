//! Thin wrappers around `rustfft` for real-valued signals.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Signed frequency (Hz) of DFT bin `k` for an `n`-point transform at step `dt`.
pub fn bin_frequency(k: usize, n: usize, dt: f64) -> f64 {
    let k = if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    };
    k / (n as f64 * dt)
}

/// Forward/inverse plan pair for one transform length.
#[derive(Clone)]
pub struct RealSpectrum {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealSpectrum").field("n", &self.n).finish()
    }
}

impl RealSpectrum {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// DFT of `x`, zero-padded (or truncated) to the plan length.
    pub fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = (0..self.n)
            .map(|k| Complex64::new(x.get(k).copied().unwrap_or(0.0), 0.0))
            .collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Real part of the normalized inverse DFT. `spectrum` is consumed as scratch.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        debug_assert_eq!(spectrum.len(), self.n);
        self.inverse.process(&mut spectrum);
        let scale = 1.0 / self.n as f64;
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }
}

/// Multiplies every bin by a real, even gain `gain(f)` and transforms back.
pub fn apply_real_gain(
    plan: &RealSpectrum,
    spectrum: &[Complex64],
    dt: f64,
    gain: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let n = plan.len();
    let shaped: Vec<Complex64> = spectrum
        .iter()
        .enumerate()
        .map(|(k, c)| c * gain(bin_frequency(k, n, dt)))
        .collect();
    plan.inverse_real(shaped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_frequencies_wrap_to_negative() {
        assert_eq!(bin_frequency(0, 8, 1.0), 0.0);
        assert_eq!(bin_frequency(4, 8, 1.0), 0.5);
        assert_eq!(bin_frequency(5, 8, 1.0), -0.375);
        assert_eq!(bin_frequency(2, 5, 0.5), 0.8);
        assert_eq!(bin_frequency(3, 5, 0.5), -0.8);
    }

    #[test]
    fn forward_inverse_round_trip() {
        let plan = RealSpectrum::new(37);
        let x: Vec<f64> = (0..37).map(|k| (k as f64 * 0.7).sin() + 0.1).collect();
        let back = plan.inverse_real(plan.forward(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
