//! Temporal detection modes, the homodyne Butterworth response and
//! spectral-width measurements shared by the rest of the chain.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::spectrum::{apply_real_gain, bin_frequency, RealSpectrum};

/// Uniform sampling grid: `len` samples starting at `t_start`, spaced by `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub t_start: f64,
    pub dt: f64,
    pub len: usize,
}

impl Grid {
    pub fn new(t_start: f64, dt: f64, len: usize) -> Self {
        Self { t_start, dt, len }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt
    }

    /// End of the covered interval, one step past the last sample.
    pub fn t_end(&self) -> f64 {
        self.t_start + self.len as f64 * self.dt
    }

    /// Same rate and length, with start times agreeing to within half a
    /// sample. Decimated traces carry a sub-sample trigger jitter, so the
    /// start time is compared on that scale.
    pub fn compatible(&self, other: &Grid) -> bool {
        self.len == other.len
            && (self.dt - other.dt).abs() <= 1e-9 * self.dt
            && (self.t_start - other.t_start).abs() <= 0.5 * self.dt * (1.0 + 1e-9)
    }

    pub(crate) fn check_compatible(&self, other: &Grid, what: &str) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: ({} samples, dt {:e}, start {:e}) vs ({} samples, dt {:e}, start {:e})",
                self.len, self.dt, self.t_start, other.len, other.dt, other.t_start
            )))
        }
    }
}

/// Real temporal profile sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMode {
    samples: Vec<f64>,
    dt: f64,
    t_start: f64,
}

impl TemporalMode {
    pub fn new(samples: Vec<f64>, dt: f64, t_start: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::param("samples", "temporal mode needs at least one sample"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive and finite, got {dt}")));
        }
        if !t_start.is_finite() {
            return Err(Error::param("t_start", "must be finite"));
        }
        if let Some(k) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::param("samples", format!("sample {k} is not finite")));
        }
        Ok(Self {
            samples,
            dt,
            t_start,
        })
    }

    /// Rescales to unit square-integral and flips the sign so the largest
    /// magnitude sample is positive.
    pub fn normalized(mut self) -> Result<Self> {
        let energy = self.energy();
        if !(energy > 0.0) || !energy.is_finite() {
            return Err(Error::Degenerate("mode has zero energy".into()));
        }
        let (_, peak) = self.peak();
        let scale = peak.signum() / energy.sqrt();
        self.samples.iter_mut().for_each(|v| *v *= scale);
        Ok(self)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.t_start, self.dt, self.samples.len())
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt
    }

    /// Riemann sum of u² dt.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>() * self.dt
    }

    /// Index and value of the sample with the largest magnitude.
    pub fn peak(&self) -> (usize, f64) {
        let mut best = (0, 0.0f64);
        for (k, &v) in self.samples.iter().enumerate() {
            if v.abs() > best.1.abs() {
                best = (k, v);
            }
        }
        best
    }

    /// Σ u_k w_k dt on a shared grid.
    pub fn inner(&self, other: &TemporalMode) -> Result<f64> {
        self.grid().check_compatible(&other.grid(), "mode inner product")?;
        Ok(dot(&self.samples, &other.samples) * self.dt)
    }

    /// Linear interpolation onto another grid (zero outside this mode's
    /// support), then renormalized.
    pub fn resampled_onto(&self, grid: Grid) -> Result<TemporalMode> {
        let last = (self.samples.len() - 1) as f64;
        let values: Vec<f64> = (0..grid.len)
            .map(|k| {
                let s = (grid.time(k) - self.t_start) / self.dt;
                if s < -1e-9 || s > last + 1e-9 {
                    return 0.0;
                }
                let s = s.clamp(0.0, last);
                let i = (s.floor() as usize).min(self.samples.len() - 1);
                let frac = s - i as f64;
                if frac <= 0.0 || i + 1 >= self.samples.len() {
                    self.samples[i]
                } else {
                    self.samples[i] * (1.0 - frac) + self.samples[i + 1] * frac
                }
            })
            .collect();
        if values.iter().all(|v| *v == 0.0) {
            return Err(Error::GridMismatch(format!(
                "mode support [{:e}, {:e}] does not overlap target grid [{:e}, {:e}]",
                self.t_start,
                self.time(self.samples.len() - 1),
                grid.t_start,
                grid.time(grid.len.saturating_sub(1))
            )));
        }
        TemporalMode::new(values, grid.dt, grid.t_start)?.normalized()
    }

    /// Time between the 25% and 75% points of the cumulative energy.
    pub fn half_energy_width(&self) -> f64 {
        let total = self.energy() / self.dt;
        let mut acc = 0.0;
        let mut lo = None;
        let mut hi = None;
        for (k, v) in self.samples.iter().enumerate() {
            let prev = acc;
            acc += v * v;
            for (target, slot) in [(0.25, &mut lo), (0.75, &mut hi)] {
                if slot.is_none() && acc >= target * total {
                    let step = acc - prev;
                    let frac = if step > 0.0 {
                        (target * total - prev) / step
                    } else {
                        0.0
                    };
                    *slot = Some(k as f64 + frac);
                }
            }
        }
        match (lo, hi) {
            (Some(a), Some(b)) => (b - a) * self.dt,
            _ => 0.0,
        }
    }

    /// Full width at half maximum of |u|, with linear interpolation at the
    /// outermost crossings.
    pub fn half_maximum_width(&self) -> f64 {
        let (kpeak, peak) = self.peak();
        let level = 0.5 * peak.abs();
        let a = |k: usize| self.samples[k].abs();
        let left = (0..kpeak).rev().find(|&k| a(k) < level).map(|k| {
            k as f64 + (level - a(k)) / (a(k + 1) - a(k))
        });
        let right = (kpeak + 1..self.samples.len()).find(|&k| a(k) < level).map(|k| {
            k as f64 - (level - a(k)) / (a(k - 1) - a(k))
        });
        let left = left.unwrap_or(0.0);
        let right = right.unwrap_or((self.samples.len() - 1) as f64);
        (right - left) * self.dt
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Second-order Butterworth magnitude response of the detection electronics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ButterworthSpec {
    /// −3 dB cutoff (Hz).
    pub f_c: f64,
    /// Low-frequency gain.
    pub g0: f64,
}

impl ButterworthSpec {
    pub fn new(f_c: f64, g0: f64) -> Result<Self> {
        if !(f_c > 0.0) || f_c.is_nan() {
            return Err(Error::param("f_c", format!("cutoff must be positive, got {f_c}")));
        }
        if !(g0 > 0.0 && g0.is_finite()) {
            return Err(Error::param("g0", format!("gain must be positive, got {g0}")));
        }
        Ok(Self { f_c, g0 })
    }

    /// Unit-gain filter with cutoff `f_c`.
    pub fn unit(f_c: f64) -> Result<Self> {
        Self::new(f_c, 1.0)
    }

    pub fn gain(&self, f: f64) -> f64 {
        butterworth_gain(f, self)
    }
}

/// G₀ / √(1 + (f/f_c)⁴), even in `f`.
pub fn butterworth_gain(f: f64, spec: &ButterworthSpec) -> f64 {
    let ratio = f.abs() / spec.f_c;
    let r2 = ratio * ratio;
    spec.g0 / (1.0 + r2 * r2).sqrt()
}

/// Decay rate of the heralded mode's leading exponential for a heralding
/// filter of line-width `gamma` (Hz). With κ = πΓ the Lorentzian power
/// spectrum of the one-sided exponential has a FWHM of exactly Γ.
pub fn mode_decay_rate(gamma: f64) -> f64 {
    PI * gamma
}

/// Causal one-sided exponential mode on an arbitrary grid:
/// u(t) ∝ e^{κ(t − t0)} up to and including `t0`, zero afterwards.
pub fn ideal_mode_on_grid(gamma: f64, t0: f64, grid: Grid) -> Result<TemporalMode> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", format!("line-width must be positive, got {gamma}")));
    }
    if !(grid.dt > 0.0) || grid.len == 0 {
        return Err(Error::param("grid", "needs positive dt and at least one sample"));
    }
    let kappa = mode_decay_rate(gamma);
    let span_before = t0 - grid.t_start;
    let captured = if span_before < 0.0 {
        0.0
    } else {
        1.0 - (-2.0 * kappa * span_before).exp()
    };
    if captured < 0.99 {
        return Err(Error::SpanTooShort { captured });
    }
    // Sample index of t0; a t0 sitting on a grid point (up to rounding) counts as inside.
    let pos = (t0 - grid.t_start) / grid.dt;
    let last_inside = if (pos - pos.round()).abs() < 1e-6 {
        pos.round()
    } else {
        pos.floor()
    };
    let amp = (2.0 * kappa).sqrt();
    let samples = (0..grid.len)
        .map(|k| {
            if (k as f64) <= last_inside {
                amp * (kappa * (grid.time(k) - t0)).exp()
            } else {
                0.0
            }
        })
        .collect();
    TemporalMode::new(samples, grid.dt, grid.t_start)?.normalized()
}

/// Ideal heralded mode sampled at `dt`, covering `span` seconds before `t0`
/// plus a zero-valued quarter span after it.
pub fn ideal_mode(gamma: f64, t0: f64, dt: f64, span: f64) -> Result<TemporalMode> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    if !(span > 0.0 && span.is_finite()) {
        return Err(Error::param("span", format!("must be positive, got {span}")));
    }
    let before = (span / dt).round() as usize;
    let after = (before / 4).max(1);
    let t_start = t0 - before as f64 * dt;
    ideal_mode_on_grid(gamma, t0, Grid::new(t_start, dt, before + 1 + after))
}

/// u_fc = FT⁻¹[H · ũ], zero-phase, computed with enough zero padding that the
/// convolution is linear rather than circular, then renormalized.
pub fn filtered_ideal_mode(mode: &TemporalMode, spec: &ButterworthSpec) -> Result<TemporalMode> {
    let n = mode.len();
    let padded = (2 * n).next_power_of_two();
    let plan = RealSpectrum::new(padded);
    let spectrum = plan.forward(mode.samples());
    let mut filtered = apply_real_gain(&plan, &spectrum, mode.dt(), |f| spec.gain(f));
    filtered.truncate(n);
    TemporalMode::new(filtered, mode.dt(), mode.t_start())?.normalized()
}

/// Full width of the band where |ũ(f)|² stays above half its maximum,
/// measured on a 16× zero-padded DFT with linear interpolation at the
/// crossings.
pub fn spectral_bandwidth(mode: &TemporalMode) -> Result<f64> {
    let n = mode.len();
    if n < 2 {
        return Err(Error::Degenerate(
            "spectral bandwidth needs at least two samples".into(),
        ));
    }
    let padded = (16 * n).next_power_of_two();
    let plan = RealSpectrum::new(padded);
    let power: Vec<f64> = plan
        .forward(mode.samples())
        .iter()
        .map(|c| c.norm_sqr())
        .collect();
    // Reorder to ascending frequency.
    let half = padded / 2;
    let order: Vec<usize> = (half + 1..padded).chain(0..=half).collect();
    let freqs: Vec<f64> = order
        .iter()
        .map(|&k| bin_frequency(k, padded, mode.dt()))
        .collect();
    let p: Vec<f64> = order.iter().map(|&k| power[k]).collect();
    let (imax, pmax) = p
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::MIN), |best, (k, v)| if v > best.1 { (k, v) } else { best });
    if !(pmax > 0.0) {
        return Err(Error::Degenerate("mode spectrum vanishes".into()));
    }
    let level = 0.5 * pmax;
    let crossing = |a: usize, b: usize| {
        // p[a] >= level > p[b]
        let frac = (p[a] - level) / (p[a] - p[b]);
        freqs[a] + frac * (freqs[b] - freqs[a])
    };
    let upper = (imax + 1..p.len())
        .find(|&k| p[k] < level)
        .map(|k| crossing(k - 1, k));
    let lower = (0..imax)
        .rev()
        .find(|&k| p[k] < level)
        .map(|k| crossing(k + 1, k));
    match (lower, upper) {
        (Some(lo), Some(hi)) => Ok(hi - lo),
        _ => Err(Error::Degenerate(
            "spectral density never falls 3 dB below its maximum".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAMMA: f64 = 9.3e6;
    const T0: f64 = -1.05e-6;
    const DT: f64 = 0.2e-9;

    fn reference_mode() -> TemporalMode {
        ideal_mode(GAMMA, T0, DT, 0.6e-6).unwrap()
    }

    #[test]
    fn gain_anchor_points() {
        let spec = ButterworthSpec::unit(301e6).unwrap();
        assert_eq!(butterworth_gain(0.0, &spec), 1.0);
        assert!((butterworth_gain(301e6, &spec) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((butterworth_gain(-602e6, &spec) - 1.0 / 17f64.sqrt()).abs() < 1e-15);
        let g = ButterworthSpec::new(10.0, 3.0).unwrap();
        assert_eq!(g.gain(0.0), 3.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ButterworthSpec::new(0.0, 1.0).is_err());
        assert!(ButterworthSpec::new(1.0, -1.0).is_err());
        assert!(ButterworthSpec::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn ideal_mode_is_causal_and_normalized() {
        let u = reference_mode();
        assert!((u.energy() - 1.0).abs() < 1e-9);
        let (kpeak, peak) = u.peak();
        assert!(peak > 0.0);
        // Peak sits on the sample nearest t0 and everything later is zero.
        assert!((u.time(kpeak) - T0).abs() <= 0.5 * DT);
        for k in kpeak + 1..u.len() {
            assert_eq!(u.samples()[k], 0.0);
        }
    }

    #[test]
    fn ideal_mode_squared_halves_after_log2_over_2pi_gamma() {
        let u = reference_mode();
        let (kpeak, peak) = u.peak();
        let half_time = 2f64.ln() / (2.0 * PI * GAMMA);
        assert!((half_time - 11.86e-9).abs() < 0.05e-9);
        // Evaluate the analytic profile at the non-grid point through the
        // sampled exponential's log-linear interpolation.
        let s = half_time / DT;
        let i = s.floor() as usize;
        let frac = s - i as f64;
        let a = u.samples()[kpeak - i].ln();
        let b = u.samples()[kpeak - i - 1].ln();
        let value = (a + frac * (b - a)).exp();
        assert!((value * value / (peak * peak) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn short_span_rejected() {
        let err = ideal_mode(GAMMA, T0, DT, 10e-9).unwrap_err();
        assert!(matches!(err, Error::SpanTooShort { .. }));
    }

    #[test]
    fn filtered_mode_overlaps() {
        let u = reference_mode();
        let wide = filtered_ideal_mode(&u, &ButterworthSpec::unit(1e12).unwrap()).unwrap();
        assert!(u.inner(&wide).unwrap() >= 0.9999);
        let at301 = filtered_ideal_mode(&u, &ButterworthSpec::unit(301e6).unwrap()).unwrap();
        assert!(u.inner(&at301).unwrap() >= 0.99);
    }

    #[test]
    fn low_cutoff_lowers_peak_and_widens() {
        let u = reference_mode();
        let slow = filtered_ideal_mode(&u, &ButterworthSpec::unit(11e6).unwrap()).unwrap();
        assert!(slow.peak().1 < u.peak().1);
        assert!(slow.half_energy_width() > u.half_energy_width());
    }

    #[test]
    fn ideal_bandwidth_matches_linewidth() {
        let b = spectral_bandwidth(&reference_mode()).unwrap();
        assert!((b / GAMMA - 1.0).abs() < 0.02, "B = {b}");
    }

    #[test]
    fn single_sample_bandwidth_is_degenerate() {
        let u = TemporalMode::new(vec![1.0], 1.0, 0.0).unwrap();
        assert!(matches!(spectral_bandwidth(&u), Err(Error::Degenerate(_))));
    }

    #[test]
    fn resampling_keeps_shape() {
        let u = reference_mode();
        let coarse = u.resampled_onto(Grid::new(u.t_start(), 2.0 * DT, u.len() / 2 + 1)).unwrap();
        let back = coarse.resampled_onto(u.grid()).unwrap();
        let ov = u.inner(&back).unwrap();
        assert!(ov > 0.995, "{ov}");
        let far = Grid::new(1.0, DT, 10);
        assert!(matches!(u.resampled_onto(far), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn normalization_fixes_sign() {
        let u = TemporalMode::new(vec![0.1, -2.0, 0.3], 0.5, 0.0)
            .unwrap()
            .normalized()
            .unwrap();
        assert!(u.samples()[1] > 0.0);
        assert!((u.energy() - 1.0).abs() < 1e-12);
        assert!(TemporalMode::new(vec![0.0; 3], 1.0, 0.0).unwrap().normalized().is_err());
        assert!(TemporalMode::new(vec![f64::NAN], 1.0, 0.0).is_err());
    }
}
