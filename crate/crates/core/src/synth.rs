//! Synthetic heralded homodyne traces.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::BandwidthFilter;
use crate::error::{Error, Result};
use crate::mode::{ideal_mode_on_grid, mode_decay_rate, ButterworthSpec, Grid, TemporalMode};
use crate::rng::{stream, Domain};
use crate::state::{heralded_density, squeezed_variance, HeraldedStateModel, MarginalSampler};

/// One digitized photocurrent segment in shot-noise units.
#[derive(Debug, Clone, PartialEq)]
pub struct HomodyneTrace {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub t_start: f64,
    /// Generator LO phase at the analysis-window center; `None` for ingested data.
    pub true_phase: Option<f64>,
    pub trace_id: u64,
}

impl HomodyneTrace {
    pub fn new(samples: Vec<f64>, dt: f64, t_start: f64, trace_id: u64) -> Result<Self> {
        let trace = Self {
            samples,
            dt,
            t_start,
            true_phase: None,
            trace_id,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", format!("trace step must be positive, got {}", self.dt)));
        }
        if !self.t_start.is_finite() {
            return Err(Error::param("t_start", "trace start must be finite"));
        }
        if let Some(k) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "samples",
                format!("trace {} has a non-finite sample at index {k}", self.trace_id),
            ));
        }
        Ok(())
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
}

/// Ground truth kept by the generator for every trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    pub trace_id: u64,
    pub theta: f64,
    pub x_true: f64,
}

/// Linear LO phase scan sampled at Poissonian heralding times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanModel {
    pub rate_rad_per_s: f64,
    pub offset_rad: f64,
    pub herald_rate_hz: f64,
}

impl Default for ScanModel {
    fn default() -> Self {
        Self {
            rate_rad_per_s: 4.0e5,
            offset_rad: 0.0,
            herald_rate_hz: 5.0e3,
        }
    }
}

/// Switches for the individual synthesis ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSwitches {
    pub background: bool,
    pub electronic: bool,
    /// Low-pass the synthesized trace at the acquisition bandwidth.
    pub intrinsic_bandwidth: bool,
}

impl Default for NoiseSwitches {
    fn default() -> Self {
        Self {
            background: true,
            electronic: true,
            intrinsic_bandwidth: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub gamma_hz: f64,
    /// Bandwidth of the acquisition chain that recorded the raw traces.
    pub fc_exp_hz: f64,
    pub fs_exp_sps: f64,
    pub n_traces: usize,
    /// Extra time recorded before and after the analysis window.
    pub side_region_s: f64,
    /// Explicit recording span; overrides `side_region_s` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_span_s: Option<[f64; 2]>,
    pub window_s: [f64; 2],
    pub t0_s: f64,
    pub snr_db: f64,
    pub eta_hd: f64,
    pub scan: ScanModel,
    pub state: HeraldedStateModel,
    pub noise: NoiseSwitches,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            gamma_hz: 9.3e6,
            fc_exp_hz: 301e6,
            fs_exp_sps: 5e9,
            n_traces: 10_000,
            side_region_s: 0.5e-6,
            trace_span_s: None,
            window_s: [-1.25e-6, -1.0e-6],
            t0_s: -1.05e-6,
            snr_db: 12.0,
            eta_hd: 0.72,
            scan: ScanModel::default(),
            state: crate::config::DEFAULT_STATE,
            noise: NoiseSwitches::default(),
            seed: 20_240_521,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("gamma_hz", self.gamma_hz)?;
        positive("fc_exp_hz", self.fc_exp_hz)?;
        positive("fs_exp_sps", self.fs_exp_sps)?;
        positive("scan.herald_rate_hz", self.scan.herald_rate_hz)?;
        if !self.scan.rate_rad_per_s.is_finite() || !self.scan.offset_rad.is_finite() {
            return Err(Error::param("scan", "scan rate and offset must be finite"));
        }
        if self.n_traces == 0 {
            return Err(Error::param("n_traces", "need at least one trace"));
        }
        if !(self.eta_hd > 0.0 && self.eta_hd <= 1.0) {
            return Err(Error::param("eta_hd", format!("must lie in (0,1], got {}", self.eta_hd)));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::param("snr_db", "must be finite"));
        }
        if !(self.side_region_s >= 0.0 && self.side_region_s.is_finite()) {
            return Err(Error::param("side_region_s", "must be non-negative"));
        }
        let [w0, w1] = self.window_s;
        if !(w0.is_finite() && w1.is_finite() && w1 > w0) {
            return Err(Error::param("window_s", format!("window [{w0}, {w1}] is empty")));
        }
        let min_len = 3.0 / mode_decay_rate(self.gamma_hz);
        if w1 - w0 < min_len {
            return Err(Error::param(
                "window_s",
                format!("window length {:e} s is shorter than 3/(pi Gamma) = {min_len:e} s", w1 - w0),
            ));
        }
        let [s0, s1] = self.span();
        if w0 < s0 || w1 > s1 {
            return Err(Error::WindowOutOfSpan {
                start: w0,
                end: w1,
                span_start: s0,
                span_end: s1,
            });
        }
        if !self.t0_s.is_finite() {
            return Err(Error::param("t0_s", "must be finite"));
        }
        self.state.validate()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fs_exp_sps
    }

    /// Recorded time span relative to the trigger.
    pub fn span(&self) -> [f64; 2] {
        self.trace_span_s.unwrap_or([
            self.window_s[0] - self.side_region_s,
            self.window_s[1] + self.side_region_s,
        ])
    }

    /// Sampling grid of a raw trace. Sample times are integer multiples of dt.
    pub fn trace_grid(&self) -> Grid {
        let dt = self.dt();
        let [s0, s1] = self.span();
        let first = (s0 / dt).round();
        let last = (s1 / dt).round();
        Grid::new(first * dt, dt, (last - first).max(0.0) as usize)
    }

    pub fn window_center(&self) -> f64 {
        0.5 * (self.window_s[0] + self.window_s[1])
    }

    /// Linear fraction of the vacuum level contributed by electronic noise;
    /// zero when that noise is switched off.
    pub fn electronic_noise_ratio(&self) -> f64 {
        if self.noise.electronic {
            10f64.powf(-self.snr_db / 10.0)
        } else {
            0.0
        }
    }

    /// Ideal mode on the raw trace grid.
    pub fn ideal_mode(&self) -> Result<TemporalMode> {
        ideal_mode_on_grid(self.gamma_hz, self.t0_s, self.trace_grid())
    }

    /// State actually reaching the detector: preparation and detection losses
    /// compose into a single loss channel.
    pub fn detected_state(&self) -> HeraldedStateModel {
        HeraldedStateModel {
            eta_prep: self.state.eta_prep * self.eta_hd,
            ..self.state
        }
    }
}

/// Trigger times and window-center LO phases of a whole dataset.
pub fn scan_phases(cfg: &AcquisitionConfig) -> Result<Vec<f64>> {
    let mut rng = stream(cfg.seed, Domain::Trigger, 0);
    let gaps = Exp::new(cfg.scan.herald_rate_hz)
        .map_err(|e| Error::param("scan.herald_rate_hz", e.to_string()))?;
    let center = cfg.window_center();
    let mut t = 0.0;
    Ok((0..cfg.n_traces)
        .map(|_| {
            t += gaps.sample(&mut rng);
            (cfg.scan.offset_rad + cfg.scan.rate_rad_per_s * (t + center)).rem_euclid(TAU)
        })
        .collect())
}

/// Reusable per-dataset synthesis state: mode, quadrature sampler and filter.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    cfg: AcquisitionConfig,
    mode: TemporalMode,
    sampler: MarginalSampler,
    filter: Option<BandwidthFilter>,
}

impl Synthesizer {
    pub fn new(cfg: &AcquisitionConfig, u_id: TemporalMode) -> Result<Self> {
        cfg.validate()?;
        cfg.trace_grid().check_compatible(&u_id.grid(), "ideal mode vs trace grid")?;
        let rho = heralded_density(&cfg.detected_state())?;
        let filter = if cfg.noise.intrinsic_bandwidth {
            Some(BandwidthFilter::new(
                u_id.len(),
                u_id.dt(),
                &ButterworthSpec::unit(cfg.fc_exp_hz)?,
            ))
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            mode: u_id,
            sampler: MarginalSampler::new(&rho),
            filter,
        })
    }

    pub fn config(&self) -> &AcquisitionConfig {
        &self.cfg
    }

    pub fn mode(&self) -> &TemporalMode {
        &self.mode
    }

    /// v = X·u_id + b⊥ + e, optionally low-passed at the acquisition bandwidth.
    pub fn trace<R: Rng + ?Sized>(
        &self,
        theta: f64,
        trace_id: u64,
        rng: &mut R,
    ) -> (HomodyneTrace, TruthRecord) {
        let cfg = &self.cfg;
        let u = self.mode.samples();
        let dt = self.mode.dt();
        let x = self.sampler.sample(theta, rng);
        let center = cfg.window_center();
        let mut v = vec![0.0; u.len()];
        if cfg.noise.background {
            for (k, slot) in v.iter_mut().enumerate() {
                let local = theta + cfg.scan.rate_rad_per_s * (self.mode.time(k) - center);
                let z: f64 = StandardNormal.sample(rng);
                *slot = z * (squeezed_variance(cfg.state.r, local) / dt).sqrt();
            }
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() * dt;
            for (slot, uk) in v.iter_mut().zip(u) {
                *slot -= proj * uk;
            }
        }
        for (slot, uk) in v.iter_mut().zip(u) {
            *slot += x * uk;
        }
        if cfg.noise.electronic {
            let sigma = (cfg.electronic_noise_ratio() * 0.5 / dt).sqrt();
            for slot in v.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *slot += sigma * z;
            }
        }
        if let Some(filter) = &self.filter {
            v = filter.apply(&v);
        }
        let trace = HomodyneTrace {
            samples: v,
            dt,
            t_start: self.mode.t_start(),
            true_phase: Some(theta),
            trace_id,
        };
        let truth = TruthRecord {
            trace_id,
            theta,
            x_true: x,
        };
        (trace, truth)
    }
}

/// Single-trace synthesis with a caller-supplied generator.
pub fn synth_trace<R: Rng + ?Sized>(
    cfg: &AcquisitionConfig,
    u_id: &TemporalMode,
    theta: f64,
    rng: &mut R,
) -> Result<HomodyneTrace> {
    let synth = Synthesizer::new(cfg, u_id.clone())?;
    Ok(synth.trace(theta, 0, rng).0)
}

/// Random access to the traces of a dataset.
pub trait TraceSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn grid(&self) -> Grid;

    fn trace(&self, index: usize) -> Result<HomodyneTrace>;
}

/// Deterministic synthetic dataset; any trace can be regenerated on demand.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    synth: Synthesizer,
    phases: Vec<f64>,
}

impl SyntheticSource {
    pub fn new(cfg: &AcquisitionConfig) -> Result<Self> {
        let synth = Synthesizer::new(cfg, cfg.ideal_mode()?)?;
        Ok(Self {
            phases: scan_phases(cfg)?,
            synth,
        })
    }

    pub fn config(&self) -> &AcquisitionConfig {
        self.synth.config()
    }

    pub fn ideal_mode(&self) -> &TemporalMode {
        self.synth.mode()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn generate(&self, index: usize) -> (HomodyneTrace, TruthRecord) {
        let mut rng = stream(self.synth.config().seed, Domain::Synth, index as u64);
        self.synth.trace(self.phases[index], index as u64, &mut rng)
    }
}

impl TraceSource for SyntheticSource {
    fn len(&self) -> usize {
        self.phases.len()
    }

    fn grid(&self) -> Grid {
        self.synth.mode().grid()
    }

    fn trace(&self, index: usize) -> Result<HomodyneTrace> {
        if index >= self.phases.len() {
            return Err(Error::param("index", format!("trace {index} out of range")));
        }
        Ok(self.generate(index).0)
    }
}

/// Number of traces generated together before handing them downstream.
pub const SYNTH_CHUNK: usize = 256;

/// All traces of a dataset in trace-id order, generated chunk-wise in parallel.
pub fn synth_dataset(
    cfg: &AcquisitionConfig,
) -> Result<impl Iterator<Item = (HomodyneTrace, TruthRecord)>> {
    let source = SyntheticSource::new(cfg)?;
    let n = source.len();
    Ok((0..n).step_by(SYNTH_CHUNK).flat_map(move |start| {
        let end = (start + SYNTH_CHUNK).min(n);
        (start..end)
            .into_par_iter()
            .map(|i| source.generate(i))
            .collect::<Vec<_>>()
    }))
}
