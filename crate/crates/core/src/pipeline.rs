//! Sweeps over (f_c, f_s), state calibration and report emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autocorr::{dominant_mode, mode_mismatch, mode_overlap, residual_rms, AutocorrAccumulator, DominantMode};
use crate::config::{ModeSource, RunConfig};
use crate::density::DensityMatrix;
use crate::dsp::{decimate_with_offset, extract_window, window_grid, BandwidthFilter};
use crate::error::{Error, Result};
use crate::io::{write_density_csv, write_heatmap_csv, write_mode_csv, write_wigner_csv, HeatmapRow};
use crate::mode::{filtered_ideal_mode, ideal_mode_on_grid, ButterworthSpec, TemporalMode};
use crate::quadrature::{
    estimate_phase, project_quadrature, side_regions, vacuum_sample_variance, PhaseReference, PhaseSource,
    QuadratureSample,
};
use crate::rng::{stream, Domain};
use crate::state::{heralded_density, HeraldedStateModel};
use crate::synth::{HomodyneTrace, SyntheticSource, TraceSource};
use crate::tomography::{
    fidelity, prepare_efficiency, run_maxlik, symmetric_axis, wigner, wigner_origin, wigner_overlap, EfficiencyMode,
    WignerGrid,
};

/// Traces generated and processed together.
pub const TRACE_CHUNK: usize = 256;

/// One (f_c, n) grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointSpec {
    pub fc_hz: f64,
    /// Decimation factor; f_s = f_s^exp / n.
    pub n: usize,
}

impl PointSpec {
    pub fn fs_sps(&self, fs_exp: f64) -> f64 {
        fs_exp / self.n as f64
    }

    pub fn label(&self) -> String {
        format!("fc{:.0}_n{}", self.fc_hz, self.n)
    }

    fn matches(&self, fc_hz: f64, n: usize) -> bool {
        self.n == n && (self.fc_hz - fc_hz).abs() <= 0.5
    }
}

/// Table row for one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub fc_hz: f64,
    pub fs_sps: f64,
    pub nyquist_ok: bool,
    pub w00: f64,
    pub fidelity_vs_baseline: f64,
    pub mode_mismatch: f64,
    pub maxlik_converged_at: Option<usize>,
}

impl SweepResult {
    pub fn heatmap_row(&self) -> HeatmapRow {
        HeatmapRow {
            fc_hz: self.fc_hz,
            fs_sps: self.fs_sps,
            nyquist_ok: self.nyquist_ok,
            w00: self.w00,
            fidelity: self.fidelity_vs_baseline,
            mismatch: self.mode_mismatch,
            converged_at: self.maxlik_converged_at,
        }
    }
}

/// 2 f_c ≤ f_s.
pub fn nyquist_ok(fc_hz: f64, fs_sps: f64) -> bool {
    2.0 * fc_hz <= fs_sps
}

/// Mode reconstructed at a grid point, with comparisons.
#[derive(Debug, Clone)]
pub struct ModeStage {
    pub dominant: DominantMode,
    /// Filtered ideal mode FT⁻¹[H·ũ_id] restricted to the window at full rate.
    pub predicted: TemporalMode,
    pub overlap_with_predicted: f64,
    pub residual_rms: f64,
    pub half_energy_width: f64,
    pub mismatch_vs_baseline: f64,
}

/// MaxLik output for one mode source.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub rho: DensityMatrix,
    pub w00: f64,
    pub fidelity_vs_baseline: f64,
    pub wigner_overlap_vs_baseline: f64,
    pub converged_at: Option<usize>,
    pub dilutions: usize,
    /// Largest decrease of the mean log-likelihood over one step (≤ 0 when
    /// the trajectory is monotone).
    pub max_likelihood_drop: f64,
    pub samples: Vec<QuadratureSample>,
}

#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub spec: PointSpec,
    pub fs_sps: f64,
    pub nyquist_ok: bool,
    pub mode: Option<ModeStage>,
    pub reconstructions: BTreeMap<ModeSourceKey, Reconstruction>,
    pub errors: Vec<String>,
}

/// Ordered key for per-source results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModeSourceKey {
    Reconstructed,
    Ideal,
}

impl From<ModeSource> for ModeSourceKey {
    fn from(m: ModeSource) -> Self {
        match m {
            ModeSource::Reconstructed => Self::Reconstructed,
            ModeSource::Ideal => Self::Ideal,
        }
    }
}

impl PointOutcome {
    pub fn reconstruction(&self, source: ModeSource) -> Option<&Reconstruction> {
        self.reconstructions.get(&source.into())
    }

    pub fn result(&self, source: ModeSource) -> SweepResult {
        let rec = self.reconstruction(source);
        SweepResult {
            fc_hz: self.spec.fc_hz,
            fs_sps: self.fs_sps,
            nyquist_ok: self.nyquist_ok,
            w00: rec.map_or(f64::NAN, |r| r.w00),
            fidelity_vs_baseline: rec.map_or(f64::NAN, |r| r.fidelity_vs_baseline),
            mode_mismatch: self.mode.as_ref().map_or(f64::NAN, |m| m.mismatch_vs_baseline),
            maxlik_converged_at: rec.and_then(|r| r.converged_at),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WignerPanel {
    pub spec: PointSpec,
    pub grid: WignerGrid,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub config: RunConfig,
    pub baseline: PointOutcome,
    /// Requested points in (f_c, n) list order.
    pub points: Vec<PointOutcome>,
    pub panels: Vec<WignerPanel>,
}

impl SweepReport {
    pub fn results(&self) -> Vec<SweepResult> {
        let source = self.config.sweep.mode_source;
        self.points.iter().map(|p| p.result(source)).collect()
    }

    pub fn point(&self, fc_hz: f64, n: usize) -> Option<&PointOutcome> {
        self.points
            .iter()
            .chain(std::iter::once(&self.baseline))
            .find(|p| p.spec.matches(fc_hz, n))
    }
}

struct FcGroup {
    fc_hz: f64,
    filter: Option<BandwidthFilter>,
    /// Chain power gain for vacuum noise, intrinsic bandwidth included.
    mean_power_gain: f64,
    /// Autocorrelation of the chain's impulse response at lag k samples,
    /// g(k) = (1/L) Σ |H_j|² cos(2πjk/L).
    response_autocorr: Vec<f64>,
    /// (slot, n) of the points using this cutoff.
    points: Vec<(usize, usize)>,
}

struct Layout {
    groups: Vec<FcGroup>,
    /// Slot specs, grouped by cutoff.
    slots: Vec<PointSpec>,
    /// Slot of every requested point, in request order.
    requested: Vec<usize>,
    baseline: usize,
}

fn response_autocorrelation(power: &[f64], lags: usize) -> Vec<f64> {
    let len = power.len() as f64;
    (0..lags)
        .into_par_iter()
        .map(|k| {
            power
                .iter()
                .enumerate()
                .map(|(j, p)| p * (std::f64::consts::TAU * ((j * k) % power.len()) as f64 / len).cos())
                .sum::<f64>()
                / len
        })
        .collect()
}

/// Variance of the projection onto `mode` of pure shot noise (per-sample
/// variance 0.5/dt_exp before the chain) after filtering and decimation by
/// `n`. Equals 0.5 for an unfiltered chain at full rate.
fn shot_noise_variance(mode: &TemporalMode, n: usize, dt_exp: f64, g: &[f64]) -> f64 {
    let w = mode.samples();
    let mut acc = 0.0;
    for d in 0..w.len() {
        let lag = d * n;
        if lag >= g.len() {
            break;
        }
        let c: f64 = w.iter().zip(&w[d..]).map(|(a, b)| a * b).sum();
        acc += if d == 0 { c } else { 2.0 * c } * g[lag];
    }
    mode.dt() * mode.dt() * 0.5 / dt_exp * acc
}

fn build_layout(cfg: &RunConfig, grid_len: usize) -> Result<Layout> {
    let acq = &cfg.acquisition;
    let window_len = crate::dsp::window_len(acq.window_s, acq.dt());
    let mut wanted: Vec<PointSpec> = Vec::new();
    for &fc_hz in &cfg.sweep.fc_list_hz {
        for &n in &cfg.sweep.n_list {
            wanted.push(PointSpec { fc_hz, n });
        }
    }
    let baseline_spec = PointSpec {
        fc_hz: acq.fc_exp_hz,
        n: 1,
    };
    let mut unique: Vec<PointSpec> = Vec::new();
    for p in wanted.iter().chain(std::iter::once(&baseline_spec)) {
        if !unique.iter().any(|q| q.matches(p.fc_hz, p.n)) {
            unique.push(*p);
        }
    }
    let mut fcs: Vec<f64> = Vec::new();
    for p in &unique {
        if !fcs.iter().any(|f| (f - p.fc_hz).abs() <= 0.5) {
            fcs.push(p.fc_hz);
        }
    }
    let intrinsic = if acq.noise.intrinsic_bandwidth {
        Some(BandwidthFilter::new(grid_len, acq.dt(), &ButterworthSpec::unit(acq.fc_exp_hz)?))
    } else {
        None
    };
    let mut groups = Vec::new();
    let mut slots = Vec::new();
    for fc_hz in fcs {
        // Cutoffs at or above the acquisition bandwidth leave the data as recorded.
        let filter = if fc_hz < acq.fc_exp_hz {
            Some(BandwidthFilter::new(grid_len, acq.dt(), &ButterworthSpec::unit(fc_hz)?))
        } else {
            None
        };
        let power: Vec<f64> = (0..grid_len)
            .map(|k| {
                let a = intrinsic.as_ref().map_or(1.0, |f| f.gains()[k]);
                let b = filter.as_ref().map_or(1.0, |f| f.gains()[k]);
                (a * b).powi(2)
            })
            .collect();
        let mean_power_gain = power.iter().sum::<f64>() / grid_len.max(1) as f64;
        let mut points = Vec::new();
        let mut max_lag = 0;
        for p in unique.iter().filter(|p| (p.fc_hz - fc_hz).abs() <= 0.5) {
            points.push((slots.len(), p.n));
            slots.push(*p);
            max_lag = max_lag.max(window_len * p.n);
        }
        let response_autocorr = response_autocorrelation(&power, max_lag.min(grid_len));
        groups.push(FcGroup {
            fc_hz,
            filter,
            mean_power_gain,
            response_autocorr,
            points,
        });
    }
    let find = |p: &PointSpec| slots.iter().position(|q| q.matches(p.fc_hz, p.n)).unwrap();
    let requested = wanted.iter().map(find).collect();
    let baseline = find(&baseline_spec);
    Ok(Layout {
        groups,
        slots,
        requested,
        baseline,
    })
}

/// Offset of the first kept sample for a trace at decimation `n`; shared by
/// every cutoff so that all points see the same sampling instants.
fn decimation_offset(seed: u64, n: usize, trace_id: u64) -> usize {
    if n == 1 {
        0
    } else {
        stream(seed, Domain::Decimate(n as u64), trace_id).random_range(0..n)
    }
}

/// Runs `visit(state, n, decimated_trace)` for every trace of `source` at
/// every grid point. Each slot sees traces in index order, whatever the
/// number of workers.
fn traverse<S, T, F>(source: &S, cfg: &RunConfig, layout: &Layout, states: &mut [T], visit: F) -> Result<()>
where
    S: TraceSource + ?Sized,
    T: Send,
    F: Fn(&mut T, &PointSpec, &HomodyneTrace) + Sync,
{
    let seed = cfg.acquisition.seed;
    let n_traces = source.len();
    for start in (0..n_traces).step_by(TRACE_CHUNK) {
        let end = (start + TRACE_CHUNK).min(n_traces);
        let traces = (start..end)
            .into_par_iter()
            .map(|i| source.trace(i))
            .collect::<Result<Vec<_>>>()?;
        let mut rest: &mut [T] = states;
        let mut jobs = Vec::new();
        for group in &layout.groups {
            let (head, tail) = rest.split_at_mut(group.points.len());
            jobs.push((group, head));
            rest = tail;
        }
        jobs.into_par_iter().try_for_each(|(group, slot_states)| -> Result<()> {
            let filtered: Vec<HomodyneTrace> = traces
                .par_iter()
                .map(|t| match &group.filter {
                    Some(f) => HomodyneTrace {
                        samples: f.apply(&t.samples),
                        ..t.clone()
                    },
                    None => t.clone(),
                })
                .collect();
            slot_states
                .par_iter_mut()
                .zip(&group.points)
                .try_for_each(|(state, &(slot, n))| -> Result<()> {
                    let spec = &layout.slots[slot];
                    for t in &filtered {
                        let offset = decimation_offset(seed, n, t.trace_id);
                        let d = decimate_with_offset(t, n, offset)?;
                        visit(state, spec, &d);
                    }
                    Ok(())
                })
        })?;
    }
    Ok(())
}

struct Pass1 {
    acc: AutocorrAccumulator,
    error: Option<String>,
}

struct Pass2 {
    /// Mode and the factor bringing its projections to shot-noise units.
    modes: Vec<(ModeSourceKey, TemporalMode, f64)>,
    reference: Option<PhaseReference>,
    samples: Vec<Vec<QuadratureSample>>,
    error: Option<String>,
}

fn note<T>(slot: &mut Option<String>, r: Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            if slot.is_none() {
                *slot = Some(e.to_string());
            }
            None
        }
    }
}

fn max_drop(trajectory: &[f64]) -> f64 {
    trajectory
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Full two-pass sweep over a synthetic dataset built from `cfg`.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let source = SyntheticSource::new(&cfg.acquisition)?;
    run_sweep_on(cfg, &source)
}

/// Full two-pass sweep over any trace source on the acquisition grid.
///
/// Pass one accumulates the autocorrelation matrix of every point; pass two
/// projects each processed trace onto the point's modes. Reconstruction of
/// each point then runs independently.
pub fn run_sweep_on<S: TraceSource + ?Sized>(cfg: &RunConfig, source: &S) -> Result<SweepReport> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::param("traces", "dataset is empty"));
    }
    let acq = &cfg.acquisition;
    let grid = source.grid();
    let layout = build_layout(cfg, grid.len)?;
    let window = acq.window_s;
    let fs_exp = acq.fs_exp_sps;

    let mut pass1: Vec<Pass1> = layout
        .slots
        .iter()
        .map(|p| Pass1 {
            acc: AutocorrAccumulator::new(window_grid(window, grid.dt * p.n as f64)),
            error: None,
        })
        .collect();
    traverse(source, cfg, &layout, &mut pass1, |state, _, trace| {
        if state.error.is_some() {
            return;
        }
        if let Some(w) = note(&mut state.error, extract_window(trace, window)) {
            note(&mut state.error, state.acc.push(&w));
        }
    })?;
    log::info!("autocorrelation pass done for {} points", layout.slots.len());

    let ideal_full = ideal_mode_on_grid(acq.gamma_hz, acq.t0_s, grid)?;
    let dominants: Vec<Result<DominantMode, String>> = pass1
        .into_par_iter()
        .map(|p| match p.error {
            Some(e) => Err(e),
            None => p
                .acc
                .finish()
                .and_then(|k| dominant_mode(&k))
                .map_err(|e| e.to_string()),
        })
        .collect();

    let primary: ModeSourceKey = cfg.sweep.mode_source.into();
    let mut wanted_sources = vec![primary];
    if cfg.sweep.compare_mode_sources {
        for k in [ModeSourceKey::Reconstructed, ModeSourceKey::Ideal] {
            if k != primary {
                wanted_sources.push(k);
            }
        }
    }

    let mut pass2: Vec<Pass2> = Vec::with_capacity(layout.slots.len());
    for (slot, spec) in layout.slots.iter().enumerate() {
        let dt = grid.dt * spec.n as f64;
        let mut error = None;
        let mut modes = Vec::new();
        for &k in &wanted_sources {
            match k {
                ModeSourceKey::Reconstructed => match &dominants[slot] {
                    Ok(d) => modes.push((k, d.mode.clone(), 1.0)),
                    Err(e) => error = error.or(Some(e.clone())),
                },
                ModeSourceKey::Ideal => {
                    let u = ideal_mode_on_grid(acq.gamma_hz, acq.t0_s, window_grid(window, dt))
                        .and_then(|u| u.normalized());
                    if let Some(u) = note(&mut error, u) {
                        modes.push((k, u, 1.0));
                    }
                }
            }
        }
        let group = layout
            .groups
            .iter()
            .find(|g| g.points.iter().any(|(s, _)| *s == slot))
            .expect("every slot belongs to a group");
        if cfg.tomography.shot_noise_units {
            for (_, u, scale) in modes.iter_mut() {
                let var = shot_noise_variance(u, spec.n, grid.dt, &group.response_autocorr);
                *scale = (0.5 / var).sqrt();
            }
        }
        let reference = match cfg.tomography.phase_source {
            PhaseSource::Truth => None,
            PhaseSource::Estimated => Some(PhaseReference {
                scan: acq.scan,
                r: acq.state.r,
                gamma_hz: acq.gamma_hz,
                vacuum_sample_variance: vacuum_sample_variance(
                    grid.dt,
                    acq.electronic_noise_ratio(),
                    group.mean_power_gain,
                ),
                electronic_ratio: acq.electronic_noise_ratio(),
                t_center: acq.window_center(),
                tolerance: cfg.tomography.phase_tolerance,
            }),
        };
        pass2.push(Pass2 {
            samples: vec![Vec::with_capacity(source.len()); modes.len()],
            modes,
            reference,
            error,
        });
    }
    let phase_source = cfg.tomography.phase_source;
    traverse(source, cfg, &layout, &mut pass2, |state, _, trace| {
        if state.modes.is_empty() {
            return;
        }
        let theta = match phase_source {
            PhaseSource::Truth => trace.true_phase.ok_or_else(|| {
                Error::param("phase_source", format!("trace {} carries no ground-truth phase", trace.trace_id))
            }),
            PhaseSource::Estimated => match &state.reference {
                Some(reference) => side_regions(trace, window).and_then(|s| estimate_phase(&s, reference)),
                None => Err(Error::param("phase_source", "no phase reference")),
            },
        };
        let Some(theta) = note(&mut state.error, theta) else {
            state.modes.clear();
            return;
        };
        let Some(w) = note(&mut state.error, extract_window(trace, window)) else {
            state.modes.clear();
            return;
        };
        for (i, (_, u, scale)) in state.modes.iter().enumerate() {
            let s = project_quadrature(&w, u).and_then(|x| QuadratureSample::new(x * scale, theta, trace.trace_id));
            match s {
                Ok(s) => state.samples[i].push(s),
                Err(e) => {
                    state.error.get_or_insert(e.to_string());
                }
            }
        }
    })?;
    log::info!("projection pass done");

    let tomo = &cfg.tomography;
    let dim = acq.state.fock_dim;
    let efficiency = tomo.efficiency_mode;
    let eta_hd = acq.eta_hd;
    let complete = source.len();
    // (slot, source) → MaxLik output.
    let jobs: Vec<(usize, ModeSourceKey, Vec<QuadratureSample>)> = pass2
        .iter_mut()
        .enumerate()
        .flat_map(|(slot, p)| {
            let ok = p.error.is_none();
            p.modes
                .iter()
                .zip(std::mem::take(&mut p.samples))
                .filter(move |(_, s)| ok && s.len() == complete)
                .map(move |((k, _, _), s)| (slot, *k, s))
                .collect::<Vec<_>>()
        })
        .collect();
    let fits: Vec<(usize, ModeSourceKey, Result<Reconstruction, String>)> = jobs
        .into_par_iter()
        .map(|(slot, key, samples)| {
            let fit = prepare_efficiency(&samples, eta_hd, efficiency)
                .and_then(|(prepared, eta)| run_maxlik(&prepared, dim, tomo.iterations, eta))
                .map(|m| Reconstruction {
                    w00: wigner_origin(&m.rho),
                    max_likelihood_drop: max_drop(&m.log_likelihood),
                    rho: m.rho,
                    fidelity_vs_baseline: f64::NAN,
                    wigner_overlap_vs_baseline: f64::NAN,
                    converged_at: m.converged_at,
                    dilutions: m.dilutions,
                    samples,
                })
                .map_err(|e| e.to_string());
            (slot, key, fit)
        })
        .collect();
    log::info!("reconstruction done");

    let mut outcomes: Vec<PointOutcome> = layout
        .slots
        .iter()
        .zip(&pass2)
        .map(|(spec, p)| {
            let fs = spec.fs_sps(fs_exp);
            PointOutcome {
                spec: *spec,
                fs_sps: fs,
                nyquist_ok: nyquist_ok(spec.fc_hz, fs),
                mode: None,
                reconstructions: BTreeMap::new(),
                errors: p.error.iter().cloned().collect(),
            }
        })
        .collect();
    for (slot, key, fit) in fits {
        match fit {
            Ok(r) => {
                outcomes[slot].reconstructions.insert(key, r);
            }
            Err(e) => outcomes[slot].errors.push(e),
        }
    }

    // Mode comparisons against the baseline and the filtered ideal mode.
    let baseline_mode = dominants[layout.baseline].as_ref().ok().map(|d| d.mode.clone());
    let mut predicted_by_fc: Vec<(f64, Result<TemporalMode>)> = Vec::new();
    for g in &layout.groups {
        let predicted = ButterworthSpec::unit(g.fc_hz)
            .and_then(|spec| filtered_ideal_mode(&ideal_full, &spec))
            .and_then(|u| {
                let w = extract_window(
                    &HomodyneTrace::new(u.samples().to_vec(), u.dt(), u.t_start(), 0)?,
                    window,
                )?;
                TemporalMode::new(w.samples, w.dt, w.t_start)?.normalized()
            });
        predicted_by_fc.push((g.fc_hz, predicted));
    }
    for (slot, dom) in dominants.into_iter().enumerate() {
        let Ok(dominant) = dom else { continue };
        let spec = layout.slots[slot];
        let predicted = &predicted_by_fc
            .iter()
            .find(|(f, _)| (f - spec.fc_hz).abs() <= 0.5)
            .expect("group per cutoff")
            .1;
        let stage = (|| -> Result<ModeStage> {
            let predicted = predicted.as_ref().map_err(|e| Error::Degenerate(e.to_string()))?.clone();
            let mismatch = match &baseline_mode {
                Some(b) => mode_mismatch(&dominant.mode, b)?,
                None => f64::NAN,
            };
            Ok(ModeStage {
                overlap_with_predicted: mode_overlap(&dominant.mode, &predicted)?,
                residual_rms: residual_rms(&dominant.mode, &predicted)?,
                half_energy_width: dominant.mode.half_energy_width(),
                mismatch_vs_baseline: mismatch,
                predicted,
                dominant,
            })
        })();
        match stage {
            Ok(s) => outcomes[slot].mode = Some(s),
            Err(e) => outcomes[slot].errors.push(e.to_string()),
        }
    }

    // Fidelities against the baseline reconstruction of the same source.
    let baseline_rhos: BTreeMap<ModeSourceKey, DensityMatrix> = outcomes[layout.baseline]
        .reconstructions
        .iter()
        .map(|(k, r)| (*k, r.rho.clone()))
        .collect();
    for o in &mut outcomes {
        let mut errs = Vec::new();
        for (k, r) in o.reconstructions.iter_mut() {
            if let Some(b) = baseline_rhos.get(k) {
                match fidelity(&r.rho, b).and_then(|f| Ok((f, wigner_overlap(&r.rho, b)?))) {
                    Ok((f, w)) => {
                        r.fidelity_vs_baseline = f;
                        r.wigner_overlap_vs_baseline = w;
                    }
                    Err(e) => errs.push(e.to_string()),
                }
            }
        }
        o.errors.extend(errs);
        for e in &o.errors {
            log::warn!("point {}: {e}", o.spec.label());
        }
    }

    let axis = symmetric_axis(tomo.wigner_half_width, tomo.wigner_points);
    let mut panels = Vec::new();
    for &(fc_hz, n) in &cfg.sweep.wigner_panels {
        let Some(o) = outcomes.iter().find(|o| o.spec.matches(fc_hz, n)) else {
            continue;
        };
        if let Some(r) = o.reconstructions.get(&primary) {
            panels.push(WignerPanel {
                spec: o.spec,
                grid: wigner(&r.rho, &axis, &axis),
            });
        }
    }

    let points = layout.requested.iter().map(|&s| outcomes[s].clone()).collect();
    let baseline = outcomes.swap_remove(layout.baseline);
    Ok(SweepReport {
        config: cfg.clone(),
        baseline,
        points,
        panels,
    })
}

/// Reconstruction of a single (f_c, n) point.
pub fn run_point<S: TraceSource + ?Sized>(cfg: &RunConfig, source: &S, fc_hz: f64, n: usize) -> Result<PointOutcome> {
    let mut single = cfg.clone();
    single.sweep.fc_list_hz = vec![fc_hz];
    single.sweep.n_list = vec![n];
    single.sweep.wigner_panels = vec![(fc_hz, n)];
    let report = run_sweep_on(&single, source)?;
    Ok(report.points.into_iter().next().expect("one requested point"))
}

/// MaxLik on an externally supplied sample set.
pub fn reconstruct_samples(
    samples: &[QuadratureSample],
    eta_hd: f64,
    efficiency: EfficiencyMode,
    dim: usize,
    iterations: usize,
) -> Result<Reconstruction> {
    let (prepared, eta) = prepare_efficiency(samples, eta_hd, efficiency)?;
    let m = run_maxlik(&prepared, dim, iterations, eta)?;
    Ok(Reconstruction {
        w00: wigner_origin(&m.rho),
        max_likelihood_drop: max_drop(&m.log_likelihood),
        rho: m.rho,
        fidelity_vs_baseline: f64::NAN,
        wigner_overlap_vs_baseline: f64::NAN,
        converged_at: m.converged_at,
        dilutions: m.dilutions,
        samples: samples.to_vec(),
    })
}

/// How a candidate state is scored during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Evaluator {
    /// Full chain at the baseline point with ground-truth phases.
    Pipeline,
    /// W(0,0) of the prepared state itself: what a perfect
    /// efficiency-corrected reconstruction returns.
    Analytic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub r: f64,
    pub xi: f64,
    pub w00: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target_w00: f64,
    pub achieved_w00: f64,
    pub tolerance: f64,
    pub evaluator: Evaluator,
    /// Parameter that was varied last: "r" or "xi".
    pub varied: String,
    pub state: HeraldedStateModel,
    pub steps: Vec<CalibrationStep>,
}

/// Calibration inputs: the target and the parameters held fixed.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationRequest {
    pub target_w00: f64,
    pub eta_hd: f64,
    pub xi: f64,
    pub eta_prep: f64,
    pub fock_dim: usize,
    pub tolerance: f64,
    pub r_max: f64,
    pub max_steps: usize,
    /// Squeezing kept while ξ is varied; the end of the r range closest to
    /// the target when unset.
    pub r_hold: Option<f64>,
}

impl CalibrationRequest {
    pub fn new(target_w00: f64, eta_hd: f64, xi: f64, eta_prep: f64) -> Self {
        Self {
            target_w00,
            eta_hd,
            xi,
            eta_prep,
            fock_dim: crate::config::DEFAULT_STATE.fock_dim,
            tolerance: 0.005,
            r_max: 1.0,
            max_steps: 40,
            r_hold: None,
        }
    }
}

/// Bisection over r with ξ and η_prep fixed; if the target lies outside
/// the range reachable through r, bisection over ξ at `r_hold` or the closest
/// r. A target
/// of zero asks for a state without negativity and is met by any W(0,0) ≥ 0.
pub fn calibrate_with<F>(req: &CalibrationRequest, evaluator: Evaluator, mut evaluate: F) -> Result<CalibrationReport>
where
    F: FnMut(&HeraldedStateModel) -> Result<f64>,
{
    if !req.target_w00.is_finite() || !(req.tolerance > 0.0) || !(req.r_max > 0.0) {
        return Err(Error::param("calibration", "target, tolerance and r_max must be finite and positive"));
    }
    let mut steps = Vec::new();
    let mut eval = |r: f64, xi: f64, steps: &mut Vec<CalibrationStep>| -> Result<(HeraldedStateModel, f64)> {
        let model = HeraldedStateModel {
            r,
            xi,
            eta_prep: req.eta_prep,
            fock_dim: req.fock_dim,
        };
        model.validate()?;
        let w = evaluate(&model)?;
        log::info!("calibration: r = {r:.5}, xi = {xi:.5} -> W00 = {w:.5}");
        steps.push(CalibrationStep { r, xi, w00: w });
        Ok((model, w))
    };
    let met = |w: f64| (w - req.target_w00).abs() <= req.tolerance || (req.target_w00 == 0.0 && w >= 0.0);
    let report = |model: HeraldedStateModel, w: f64, varied: &str, steps: Vec<CalibrationStep>| CalibrationReport {
        target_w00: req.target_w00,
        achieved_w00: w,
        tolerance: req.tolerance,
        evaluator,
        varied: varied.into(),
        state: model,
        steps,
    };

    let (lo_model, w_lo) = eval(0.0, req.xi, &mut steps)?;
    if met(w_lo) {
        return Ok(report(lo_model, w_lo, "r", steps));
    }
    // Largest r the Fock cutoff supports.
    let mut r_hi = req.r_max;
    let (hi_model, w_hi) = loop {
        match eval(r_hi, req.xi, &mut steps) {
            Ok(v) => break v,
            Err(Error::FockTail { .. }) if r_hi > 1e-3 => r_hi *= 0.8,
            Err(e) => return Err(e),
        }
    };
    if met(w_hi) {
        return Ok(report(hi_model, w_hi, "r", steps));
    }
    let target = req.target_w00;
    let within = |a: f64, b: f64| (a.min(b)..=a.max(b)).contains(&target);
    if within(w_lo, w_hi) {
        let (mut a, mut fa, mut b) = (0.0, w_lo, r_hi);
        let mut best = (lo_model, w_lo);
        for _ in 0..req.max_steps {
            let mid = 0.5 * (a + b);
            let (m, w) = eval(mid, req.xi, &mut steps)?;
            if (w - target).abs() < (best.1 - target).abs() {
                best = (m, w);
            }
            if met(w) {
                return Ok(report(m, w, "r", steps));
            }
            if (w > target) == (fa > target) {
                a = mid;
                fa = w;
            } else {
                b = mid;
            }
        }
        return Ok(report(best.0, best.1, "r", steps));
    }
    let r = match req.r_hold {
        Some(r) => r.clamp(0.0, r_hi),
        None if (w_lo - target).abs() <= (w_hi - target).abs() => 0.0,
        None => r_hi,
    };
    let (m0, w0) = eval(r, 0.0, &mut steps)?;
    let (m1, w1) = eval(r, 1.0, &mut steps)?;
    for (m, w) in [(m0, w0), (m1, w1)] {
        if met(w) {
            return Ok(report(m, w, "xi", steps));
        }
    }
    if within(w0, w1) {
        let (mut a, mut fa, mut b) = (0.0, w0, 1.0);
        let mut best = (m0, w0);
        for _ in 0..req.max_steps {
            let mid = 0.5 * (a + b);
            let (m, w) = eval(r, mid, &mut steps)?;
            if (w - target).abs() < (best.1 - target).abs() {
                best = (m, w);
            }
            if met(w) {
                return Ok(report(m, w, "xi", steps));
            }
            if (w > target) == (fa > target) {
                a = mid;
                fa = w;
            } else {
                b = mid;
            }
        }
        return Ok(report(best.0, best.1, "xi", steps));
    }
    let all = steps.iter().map(|s| s.w00);
    let low = all.clone().fold(f64::INFINITY, f64::min);
    let high = all.fold(f64::NEG_INFINITY, f64::max);
    Err(Error::Unreachable { target, low, high })
}

/// Calibrates the state of `cfg` against a baseline W(0,0) target.
pub fn calibrate_state(cfg: &RunConfig, req: &CalibrationRequest, evaluator: Evaluator) -> Result<CalibrationReport> {
    match evaluator {
        Evaluator::Analytic => calibrate_with(req, evaluator, |m| Ok(wigner_origin(&heralded_density(m)?))),
        Evaluator::Pipeline => {
            let mut base = cfg.clone();
            base.acquisition.eta_hd = req.eta_hd;
            base.tomography.phase_source = PhaseSource::Truth;
            base.tomography.efficiency_mode = EfficiencyMode::Povm;
            base.sweep.mode_source = ModeSource::Reconstructed;
            base.sweep.compare_mode_sources = false;
            base.sweep.wigner_panels.clear();
            base.sweep.fc_list_hz = vec![base.acquisition.fc_exp_hz];
            base.sweep.n_list = vec![1];
            calibrate_with(req, evaluator, |m| {
                let mut c = base.clone();
                c.acquisition.state = *m;
                let report = run_sweep(&c)?;
                report
                    .baseline
                    .reconstruction(ModeSource::Reconstructed)
                    .map(|r| r.w00)
                    .ok_or_else(|| Error::Degenerate(format!("baseline failed: {}", report.baseline.errors.join("; "))))
            })
        }
    }
}

#[derive(Debug, Serialize)]
struct ManifestPoint {
    label: String,
    fc_hz: f64,
    fs_sps: f64,
    nyquist_ok: bool,
    w00: Option<f64>,
    w00_ideal_mode: Option<f64>,
    w00_reconstructed_mode: Option<f64>,
    fidelity_vs_baseline: Option<f64>,
    wigner_overlap_vs_baseline: Option<f64>,
    mode_mismatch: Option<f64>,
    overlap_with_filtered_ideal: Option<f64>,
    residual_rms: Option<f64>,
    half_energy_width_s: Option<f64>,
    degenerate_mode: Option<bool>,
    errors: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    seed: u64,
    config_hash: String,
    efficiency_mode: String,
    mode_source: String,
    phase_source: String,
    calibration: Option<&'a CalibrationReport>,
    files: Vec<String>,
    baseline: ManifestPoint,
    points: Vec<ManifestPoint>,
    config: &'a RunConfig,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn manifest_point(o: &PointOutcome, primary: ModeSource) -> ManifestPoint {
    let rec = o.reconstruction(primary);
    let w = |s: ModeSource| o.reconstruction(s).map(|r| r.w00);
    ManifestPoint {
        label: o.spec.label(),
        fc_hz: o.spec.fc_hz,
        fs_sps: o.fs_sps,
        nyquist_ok: o.nyquist_ok,
        w00: rec.map(|r| r.w00),
        w00_ideal_mode: w(ModeSource::Ideal),
        w00_reconstructed_mode: w(ModeSource::Reconstructed),
        fidelity_vs_baseline: rec.and_then(|r| finite(r.fidelity_vs_baseline)),
        wigner_overlap_vs_baseline: rec.and_then(|r| finite(r.wigner_overlap_vs_baseline)),
        mode_mismatch: o.mode.as_ref().and_then(|m| finite(m.mismatch_vs_baseline)),
        overlap_with_filtered_ideal: o.mode.as_ref().map(|m| m.overlap_with_predicted),
        residual_rms: o.mode.as_ref().map(|m| m.residual_rms),
        half_energy_width_s: o.mode.as_ref().map(|m| m.half_energy_width),
        degenerate_mode: o.mode.as_ref().map(|m| m.dominant.degenerate),
        errors: o.errors.clone(),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the heat map, per-point modes and density matrices, the Wigner
/// panels and a TOML manifest into `out_dir`. Returns the written paths.
pub fn emit_reports(
    report: &SweepReport,
    calibration: Option<&CalibrationReport>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if report.points.is_empty() {
        return Err(Error::param("results", "nothing to report"));
    }
    let primary = report.config.sweep.mode_source;
    for sub in ["modes", "density", "wigner"] {
        create_dir(&out_dir.join(sub))?;
    }
    let mut files = Vec::new();
    let heatmap = out_dir.join("heatmap.csv");
    let rows: Vec<HeatmapRow> = report.results().iter().map(SweepResult::heatmap_row).collect();
    write_heatmap_csv(&heatmap, &rows)?;
    files.push(heatmap);
    for o in report.points.iter().chain(std::iter::once(&report.baseline)) {
        let label = o.spec.label();
        if let Some(m) = &o.mode {
            let p = out_dir.join("modes").join(format!("mode_{label}.csv"));
            if !files.contains(&p) {
                write_mode_csv(&p, &m.dominant.mode)?;
                files.push(p);
            }
        }
        if let Some(r) = o.reconstruction(primary) {
            let p = out_dir.join("density").join(format!("rho_{label}.csv"));
            if !files.contains(&p) {
                write_density_csv(&p, &r.rho)?;
                files.push(p);
            }
        }
    }
    for panel in &report.panels {
        let p = out_dir.join("wigner").join(format!("wigner_{}.csv", panel.spec.label()));
        write_wigner_csv(&p, &panel.grid)?;
        files.push(p);
    }
    let manifest_path = out_dir.join("manifest.toml");
    let rel: Vec<String> = files
        .iter()
        .map(|p| p.strip_prefix(out_dir).unwrap_or(p).display().to_string())
        .collect();
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: report.config.acquisition.seed,
        config_hash: format!("{:016x}", report.config.hash()?),
        efficiency_mode: report.config.tomography.efficiency_mode.to_string(),
        mode_source: primary.to_string(),
        phase_source: format!("{:?}", report.config.tomography.phase_source).to_lowercase(),
        calibration,
        files: rel,
        baseline: manifest_point(&report.baseline, primary),
        points: report.points.iter().map(|o| manifest_point(o, primary)).collect(),
        config: &report.config,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    files.push(manifest_path);
    Ok(files)
}
