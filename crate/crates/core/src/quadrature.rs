//! Projection of processed traces onto a temporal mode and LO-phase
//! assignment.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::dsp::{extract_window, window_range};
use crate::error::{Error, Result};
use crate::mode::{mode_decay_rate, TemporalMode};
use crate::synth::{HomodyneTrace, ScanModel};

/// One tomographic point: quadrature value and LO phase in [0, 2π).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSample {
    pub x: f64,
    pub theta: f64,
    pub trace_id: u64,
}

impl QuadratureSample {
    pub fn new(x: f64, theta: f64, trace_id: u64) -> Result<Self> {
        if !x.is_finite() || !theta.is_finite() {
            return Err(Error::param(
                "sample",
                format!("trace {trace_id}: quadrature {x} or phase {theta} not finite"),
            ));
        }
        Ok(Self {
            x,
            theta: theta.rem_euclid(TAU),
            trace_id,
        })
    }
}

/// X = Σ_k u_k v_k dt.
pub fn project_quadrature(trace: &HomodyneTrace, mode: &TemporalMode) -> Result<f64> {
    mode.grid().check_compatible(&trace.grid(), "projection")?;
    Ok(project_samples(&trace.samples, mode))
}

pub(crate) fn project_samples(samples: &[f64], mode: &TemporalMode) -> f64 {
    crate::mode::dot(samples, mode.samples()) * mode.dt()
}

/// Where tomography takes its LO phases from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PhaseSource {
    /// Generator ground truth stored with each trace.
    #[default]
    Truth,
    /// Squeezed-noise variance of the side regions.
    Estimated,
}

impl std::str::FromStr for PhaseSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truth" => Ok(Self::Truth),
            "estimated" => Ok(Self::Estimated),
            other => Err(Error::param(
                "phase_source",
                format!("expected truth or estimated, got {other}"),
            )),
        }
    }
}

/// Everything the side-region phase estimator needs to know about the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseReference {
    pub scan: ScanModel,
    /// Squeezing parameter of the background.
    pub r: f64,
    pub gamma_hz: f64,
    /// Per-sample variance of a vacuum trace through the chain, electronic
    /// noise included.
    pub vacuum_sample_variance: f64,
    /// Electronic noise as a fraction of the vacuum level.
    pub electronic_ratio: f64,
    /// Time the returned phase refers to (window center).
    pub t_center: f64,
    /// Relative slack of the side-variance plausibility check.
    pub tolerance: f64,
}

/// (0.5/dt)(1+ε)·mean|H|²: per-sample variance of filtered vacuum plus
/// electronic noise synthesized at step `dt`.
pub fn vacuum_sample_variance(dt: f64, electronic_ratio: f64, mean_power_gain: f64) -> f64 {
    0.5 / dt * (1.0 + electronic_ratio) * mean_power_gain
}

pub const MIN_SIDE_SAMPLES: usize = 200;

/// LO phase at the window center, modulo π, from the variance of the
/// squeezed background in the side regions. Each side segment is cut into
/// boxcar chunks of duration 1/(πΓ); the chunk variances are fitted to
/// V(θ₀ + ω(t − t_c)) = (cosh 2r − sinh 2r cos 2θ)/2 linearly in
/// (cos 2θ₀, sin 2θ₀), the known scan drift fixing the sign of θ₀.
pub fn estimate_phase(sides: &[HomodyneTrace], reference: &PhaseReference) -> Result<f64> {
    let r = reference.r;
    if !(r > 0.0) {
        return Err(Error::PhaseUnidentifiable(
            "background is not squeezed (r = 0), its variance carries no phase".into(),
        ));
    }
    let total: usize = sides.iter().map(|s| s.len()).sum();
    if total < MIN_SIDE_SAMPLES {
        return Err(Error::param(
            "side regions",
            format!("{total} samples, need at least {MIN_SIDE_SAMPLES}"),
        ));
    }
    let eps = reference.electronic_ratio;
    let chunk_time = 1.0 / mode_decay_rate(reference.gamma_hz);
    let mut points = Vec::new();
    for side in sides {
        if side.is_empty() {
            continue;
        }
        let len = ((chunk_time / side.dt).round() as usize).clamp(1, side.len());
        for (c, chunk) in side.samples.chunks(len).enumerate() {
            if chunk.len() * 2 < len {
                continue;
            }
            let mean_sq = chunk.iter().map(|v| v * v).sum::<f64>() / chunk.len() as f64;
            let ratio = mean_sq / reference.vacuum_sample_variance;
            let variance = ratio * 0.5 * (1.0 + eps) - 0.5 * eps;
            let center = side.t_start + (c * len) as f64 * side.dt + 0.5 * (chunk.len() - 1) as f64 * side.dt;
            let drift = reference.scan.rate_rad_per_s * (center - reference.t_center);
            points.push((variance, drift));
        }
    }
    if points.is_empty() {
        return Err(Error::param("side regions", "no usable variance chunks"));
    }
    let mean_var = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let low = (-2.0 * r).exp() / 2.0 * (1.0 - reference.tolerance);
    let high = (2.0 * r).exp() / 2.0 * (1.0 + reference.tolerance);
    if !(low..=high).contains(&mean_var) {
        return Err(Error::PhaseUnidentifiable(format!(
            "side-region variance {mean_var:.4} outside the squeezing range [{low:.4}, {high:.4}]"
        )));
    }
    let a = (2.0 * r).cosh() / 2.0;
    let b = (2.0 * r).sinh() / 2.0;
    // y = C cos 2δ − S sin 2δ with C = cos 2θ₀, S = sin 2θ₀.
    let (mut scc, mut sss, mut scs, mut syc, mut sys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(v, d) in &points {
        let y = (a - v) / b;
        let (s2, c2) = (2.0 * d).sin_cos();
        scc += c2 * c2;
        sss += s2 * s2;
        scs -= c2 * s2;
        syc += y * c2;
        sys -= y * s2;
    }
    let det = scc * sss - scs * scs;
    let (c, s) = if det > 1e-9 * (scc * sss).max(f64::MIN_POSITIVE) {
        ((syc * sss - sys * scs) / det, (sys * scc - syc * scs) / det)
    } else {
        // No drift across the side regions: only cos 2θ₀ is observable.
        let c = (syc / scc).clamp(-1.0, 1.0);
        (c, (1.0 - c * c).sqrt())
    };
    Ok((0.5 * s.atan2(c)).rem_euclid(PI))
}

/// Side regions of a trace: everything before and after the analysis window.
pub fn side_regions(trace: &HomodyneTrace, window: [f64; 2]) -> Result<[HomodyneTrace; 2]> {
    let range = window_range(&trace.grid(), window)?;
    let before = HomodyneTrace {
        samples: trace.samples[..range.start].to_vec(),
        ..trace.clone()
    };
    let after = HomodyneTrace {
        t_start: trace.t_start + range.end as f64 * trace.dt,
        samples: trace.samples[range.end..].to_vec(),
        ..trace.clone()
    };
    Ok([before, after])
}

/// Settings for turning full traces into tomography input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TomoInputConfig {
    pub window: [f64; 2],
    pub phase_source: PhaseSource,
    pub eta_hd: f64,
    pub reference: Option<PhaseReference>,
}

/// Quadrature samples plus the detection efficiency they must be read with.
#[derive(Debug, Clone, PartialEq)]
pub struct TomoSet {
    pub samples: Vec<QuadratureSample>,
    pub eta_hd: f64,
}

/// Windows, projects and phase-tags each trace.
pub fn collect_tomo_set(
    traces: &[HomodyneTrace],
    mode: &TemporalMode,
    cfg: &TomoInputConfig,
) -> Result<TomoSet> {
    if !(mode.energy() > 0.0) {
        return Err(Error::Degenerate("projection mode is identically zero".into()));
    }
    if !(cfg.eta_hd > 0.0 && cfg.eta_hd <= 1.0) {
        return Err(Error::param("eta_hd", format!("must lie in (0,1], got {}", cfg.eta_hd)));
    }
    let samples = traces
        .iter()
        .map(|trace| {
            let win = extract_window(trace, cfg.window)?;
            let x = project_quadrature(&win, mode)?;
            let theta = match cfg.phase_source {
                PhaseSource::Truth => trace.true_phase.ok_or_else(|| {
                    Error::param(
                        "phase_source",
                        format!("trace {} carries no ground-truth phase", trace.trace_id),
                    )
                })?,
                PhaseSource::Estimated => {
                    let reference = cfg.reference.as_ref().ok_or_else(|| {
                        Error::param("phase_source", "estimated phases need a phase reference")
                    })?;
                    estimate_phase(&side_regions(trace, cfg.window)?, reference)?
                }
            };
            QuadratureSample::new(x, theta, trace.trace_id)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TomoSet {
        samples,
        eta_hd: cfg.eta_hd,
    })
}

/// Smallest phase distance modulo π.
pub fn phase_error_mod_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}
