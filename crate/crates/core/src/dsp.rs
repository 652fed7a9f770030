//! Digital degradations of the acquisition chain: zero-phase Butterworth
//! low-pass, decimation with a random first sample, and window extraction.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mode::{ButterworthSpec, Grid};
use crate::spectrum::{bin_frequency, RealSpectrum};
use crate::synth::HomodyneTrace;

/// Precomputed zero-phase gain for one trace length, step and cutoff.
#[derive(Debug, Clone)]
pub struct BandwidthFilter {
    plan: RealSpectrum,
    gain: Vec<f64>,
}

impl BandwidthFilter {
    pub fn new(len: usize, dt: f64, spec: &ButterworthSpec) -> Self {
        let gain = (0..len).map(|k| spec.gain(bin_frequency(k, len, dt))).collect();
        Self {
            plan: RealSpectrum::new(len),
            gain,
        }
    }

    pub fn len(&self) -> usize {
        self.gain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gain.is_empty()
    }

    pub fn gains(&self) -> &[f64] {
        &self.gain
    }

    /// Mean of |H|² over the DFT bins, i.e. the white-noise power transmitted.
    pub fn mean_power_gain(&self) -> f64 {
        self.gain.iter().map(|g| g * g).sum::<f64>() / self.gain.len().max(1) as f64
    }

    pub fn apply(&self, samples: &[f64]) -> Vec<f64> {
        debug_assert_eq!(samples.len(), self.gain.len());
        self.apply_spectrum(&self.plan.forward(samples))
    }

    /// Filters an already transformed trace; lets several cutoffs share one
    /// forward transform.
    pub fn apply_spectrum(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let shaped = spectrum
            .iter()
            .zip(&self.gain)
            .map(|(c, g)| c * g)
            .collect();
        self.plan.inverse_real(shaped)
    }

    pub fn forward(&self, samples: &[f64]) -> Vec<Complex64> {
        self.plan.forward(samples)
    }
}

/// FT⁻¹[H·ṽ] over the trace's own DFT grid.
pub fn apply_bandwidth(trace: &HomodyneTrace, spec: &ButterworthSpec) -> Result<HomodyneTrace> {
    if trace.is_empty() {
        return Err(Error::param("trace", "cannot filter an empty trace"));
    }
    let filter = BandwidthFilter::new(trace.len(), trace.dt, spec);
    Ok(HomodyneTrace {
        samples: filter.apply(&trace.samples),
        ..trace.clone()
    })
}

/// Keeps samples o, o+n, o+2n, … with o uniform in {0, …, n−1}.
pub fn decimate<R: Rng + ?Sized>(trace: &HomodyneTrace, n: usize, rng: &mut R) -> Result<HomodyneTrace> {
    check_factor(trace, n)?;
    let offset = rng.random_range(0..n);
    decimate_with_offset(trace, n, offset)
}

fn check_factor(trace: &HomodyneTrace, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::param("n", "decimation factor must be at least 1"));
    }
    if n > trace.len() {
        return Err(Error::param(
            "n",
            format!("decimation factor {n} exceeds trace length {}", trace.len()),
        ));
    }
    Ok(())
}

pub fn decimate_with_offset(trace: &HomodyneTrace, n: usize, offset: usize) -> Result<HomodyneTrace> {
    check_factor(trace, n)?;
    if offset >= n {
        return Err(Error::param("offset", format!("offset {offset} must be below factor {n}")));
    }
    Ok(HomodyneTrace {
        samples: trace.samples.iter().skip(offset).step_by(n).copied().collect(),
        dt: trace.dt * n as f64,
        t_start: trace.t_start + offset as f64 * trace.dt,
        ..trace.clone()
    })
}

/// Sample count used for a window of the given duration at step `dt`.
pub fn window_len(window: [f64; 2], dt: f64) -> usize {
    ((window[1] - window[0]) / dt).round() as usize
}

/// Nominal grid of a window; every extracted window lies within half a
/// sample of it.
pub fn window_grid(window: [f64; 2], dt: f64) -> Grid {
    Grid::new(window[0], dt, window_len(window, dt))
}

/// Index range of the window inside `grid`, start snapped to the nearest sample.
pub fn window_range(grid: &Grid, window: [f64; 2]) -> Result<std::ops::Range<usize>> {
    let out_of_span = || Error::WindowOutOfSpan {
        start: window[0],
        end: window[1],
        span_start: grid.t_start,
        span_end: grid.t_end(),
    };
    if !(window[1] > window[0]) {
        return Err(Error::param("window", "window end must follow its start"));
    }
    let start = ((window[0] - grid.t_start) / grid.dt).round();
    if start < 0.0 {
        return Err(out_of_span());
    }
    let start = start as usize;
    let end = start + window_len(window, grid.dt);
    if end > grid.len || end == start {
        return Err(out_of_span());
    }
    Ok(start..end)
}

pub fn extract_window(trace: &HomodyneTrace, window: [f64; 2]) -> Result<HomodyneTrace> {
    let range = window_range(&trace.grid(), window)?;
    Ok(HomodyneTrace {
        t_start: trace.t_start + range.start as f64 * trace.dt,
        samples: trace.samples[range].to_vec(),
        ..trace.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use std::f64::consts::TAU;

    fn trace(samples: Vec<f64>, dt: f64) -> HomodyneTrace {
        HomodyneTrace::new(samples, dt, 0.0, 1).unwrap()
    }

    #[test]
    fn wide_filter_is_identity() {
        let t = trace((0..100).map(|k| (k as f64 * 0.37).cos()).collect(), 1e-9);
        let out = apply_bandwidth(&t, &ButterworthSpec::unit(1e6 * 1e9).unwrap()).unwrap();
        for (a, b) in t.samples.iter().zip(&out.samples) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn sinusoid_at_cutoff_loses_3db() {
        let n = 1000;
        let dt = 1e-9;
        let f = 50.0 / (n as f64 * dt);
        let t = trace((0..n).map(|k| (TAU * f * k as f64 * dt).sin()).collect(), dt);
        let out = apply_bandwidth(&t, &ButterworthSpec::unit(f).unwrap()).unwrap();
        for (a, b) in t.samples.iter().zip(&out.samples) {
            assert!((a / 2f64.sqrt() - b).abs() < 1e-6);
        }
    }

    #[test]
    fn dc_passes_and_empty_fails() {
        let t = trace(vec![2.5; 64], 1e-9);
        let out = apply_bandwidth(&t, &ButterworthSpec::unit(1e6).unwrap()).unwrap();
        assert!(out.samples.iter().all(|v| (v - 2.5).abs() < 1e-12));
        let empty = HomodyneTrace::new(vec![], 1e-9, 0.0, 0).unwrap();
        assert!(apply_bandwidth(&empty, &ButterworthSpec::unit(1e6).unwrap()).is_err());
    }

    #[test]
    fn decimation_lengths() {
        let t = trace((0..1000).map(|k| k as f64).collect(), 0.2e-9);
        let mut rng = stream(3, Domain::Aux(1), 0);
        assert_eq!(decimate(&t, 1, &mut rng).unwrap(), t);
        let d = decimate(&t, 4, &mut rng).unwrap();
        assert_eq!(d.len(), 250);
        assert!((d.dt - 0.8e-9).abs() < 1e-24);
        let o = d.samples[0] as usize;
        assert!((d.t_start - o as f64 * 0.2e-9).abs() < 1e-24);
        assert!(decimate(&t, 0, &mut rng).is_err());
        assert!(decimate(&t, 1001, &mut rng).is_err());
    }

    #[test]
    fn window_sizes() {
        let dt = 0.2e-9;
        let t = HomodyneTrace::new(vec![0.0; 6250], dt, -1.75e-6, 0).unwrap();
        let w = extract_window(&t, [-1.25e-6, -1.0e-6]).unwrap();
        assert!((w.len() as i64 - 1250).abs() <= 1);
        assert!((w.t_start + 1.25e-6).abs() < 1e-15);
        let full = extract_window(&t, [t.t_start, t.grid().t_end()]).unwrap();
        assert_eq!(full, t);
        let d = decimate_with_offset(&t, 21, 7).unwrap();
        let wd = extract_window(&d, [-1.25e-6, -1.0e-6]).unwrap();
        assert!(wd.len() == 59 || wd.len() == 60);
        assert!((wd.t_start + 1.25e-6).abs() <= 0.5 * d.dt);
        assert!(matches!(
            extract_window(&t, [-2.0e-6, -1.0e-6]),
            Err(Error::WindowOutOfSpan { .. })
        ));
    }
}
