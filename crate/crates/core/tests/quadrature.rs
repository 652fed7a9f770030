use cvchain::config::{ModeSource, RunConfig};
use cvchain::dsp::BandwidthFilter;
use cvchain::quadrature::{
    collect_tomo_set, estimate_phase, phase_error_mod_pi, side_regions, vacuum_sample_variance, PhaseReference,
    PhaseSource, TomoInputConfig,
};
use cvchain::rng::{stream, Domain};
use cvchain::synth::{NoiseSwitches, SyntheticSource, Synthesizer, TraceSource};
use cvchain::{AcquisitionConfig, ButterworthSpec, Error, HeraldedStateModel, HomodyneTrace, TemporalMode};

fn clean_cfg(r: f64, n_traces: usize) -> AcquisitionConfig {
    AcquisitionConfig {
        n_traces,
        state: HeraldedStateModel {
            r,
            xi: 0.8,
            eta_prep: 0.85,
            fock_dim: 16,
        },
        noise: NoiseSwitches {
            background: true,
            electronic: false,
            intrinsic_bandwidth: true,
        },
        ..AcquisitionConfig::default()
    }
}

fn reference(cfg: &AcquisitionConfig) -> PhaseReference {
    let grid = cfg.trace_grid();
    let filter = BandwidthFilter::new(grid.len, grid.dt, &ButterworthSpec::unit(cfg.fc_exp_hz).unwrap());
    PhaseReference {
        scan: cfg.scan,
        r: cfg.state.r,
        gamma_hz: cfg.gamma_hz,
        vacuum_sample_variance: vacuum_sample_variance(grid.dt, cfg.electronic_noise_ratio(), filter.mean_power_gain()),
        electronic_ratio: cfg.electronic_noise_ratio(),
        t_center: cfg.window_center(),
        tolerance: 0.25,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn side_region_phases_track_the_truth() {
    let cfg = clean_cfg(0.5, 400);
    let source = SyntheticSource::new(&cfg).unwrap();
    let reference = reference(&cfg);
    let errors: Vec<f64> = (0..cfg.n_traces)
        .map(|i| {
            let trace = source.trace(i).unwrap();
            let est = estimate_phase(&side_regions(&trace, cfg.window_s).unwrap(), &reference).unwrap();
            phase_error_mod_pi(est, trace.true_phase.unwrap())
        })
        .collect();
    let m = median(errors);
    assert!(m < 0.1, "median phase error {m}");
}

#[test]
fn maximal_squeezing_phase_is_found_near_zero() {
    let cfg = clean_cfg(0.5, 1);
    let synth = Synthesizer::new(&cfg, cfg.ideal_mode().unwrap()).unwrap();
    let reference = reference(&cfg);
    let errors: Vec<f64> = (0..200u64)
        .map(|id| {
            let mut rng = stream(31, Domain::Aux(0), id);
            let (trace, _) = synth.trace(0.0, id, &mut rng);
            let est = estimate_phase(&side_regions(&trace, cfg.window_s).unwrap(), &reference).unwrap();
            phase_error_mod_pi(est, 0.0)
        })
        .collect();
    let m = median(errors);
    assert!(m < 0.15, "median distance to 0 mod π: {m}");
}

#[test]
fn unsqueezed_background_is_unidentifiable() {
    let cfg = clean_cfg(0.0, 1);
    let synth = Synthesizer::new(&cfg, cfg.ideal_mode().unwrap()).unwrap();
    let mut rng = stream(32, Domain::Aux(0), 0);
    let (trace, _) = synth.trace(0.3, 0, &mut rng);
    let err = estimate_phase(&side_regions(&trace, cfg.window_s).unwrap(), &reference(&cfg)).unwrap_err();
    assert!(matches!(err, Error::PhaseUnidentifiable(_)), "{err}");
}

#[test]
fn implausible_side_variance_is_rejected() {
    let cfg = clean_cfg(0.5, 1);
    let synth = Synthesizer::new(&cfg, cfg.ideal_mode().unwrap()).unwrap();
    let mut rng = stream(33, Domain::Aux(0), 0);
    let (mut trace, _) = synth.trace(0.3, 0, &mut rng);
    trace.samples.iter_mut().for_each(|v| *v *= 3.0);
    let err = estimate_phase(&side_regions(&trace, cfg.window_s).unwrap(), &reference(&cfg)).unwrap_err();
    assert!(matches!(err, Error::PhaseUnidentifiable(_)), "{err}");
}

#[test]
fn every_trace_yields_one_sample() {
    let cfg = AcquisitionConfig {
        n_traces: 43_000,
        trace_span_s: Some([-1.25e-6, -1.0e-6]),
        noise: NoiseSwitches {
            background: false,
            electronic: false,
            intrinsic_bandwidth: false,
        },
        ..AcquisitionConfig::default()
    };
    cfg.validate().unwrap();
    let source = SyntheticSource::new(&cfg).unwrap();
    let traces: Vec<HomodyneTrace> = (0..source.len()).map(|i| source.trace(i).unwrap()).collect();
    let tomo = TomoInputConfig {
        window: cfg.window_s,
        phase_source: PhaseSource::Truth,
        eta_hd: cfg.eta_hd,
        reference: None,
    };
    let set = collect_tomo_set(&traces, source.ideal_mode(), &tomo).unwrap();
    assert_eq!(set.samples.len(), 43_000);
    assert_eq!(set.eta_hd, 0.72);
    for (i, s) in set.samples.iter().enumerate() {
        assert_eq!(s.trace_id, i as u64);
        let (_, truth) = source.generate(i);
        assert!((s.x - truth.x_true).abs() < 1e-9);
        assert!((0.0..std::f64::consts::TAU).contains(&s.theta));
    }
}

#[test]
fn empty_mode_and_missing_truth_are_errors() {
    let cfg = clean_cfg(0.5, 1);
    let source = SyntheticSource::new(&cfg).unwrap();
    let trace = source.trace(0).unwrap();
    let grid = cfg.trace_grid();
    let tomo = TomoInputConfig {
        window: [grid.t_start, grid.t_end()],
        phase_source: PhaseSource::Truth,
        eta_hd: 0.72,
        reference: None,
    };
    let zero = TemporalMode::new(vec![0.0; grid.len], grid.dt, grid.t_start).unwrap();
    assert!(collect_tomo_set(&[trace.clone()], &zero, &tomo).is_err());
    let bare = HomodyneTrace::new(trace.samples.clone(), trace.dt, trace.t_start, 0).unwrap();
    assert!(collect_tomo_set(&[bare], source.ideal_mode(), &tomo).is_err());
    let estimated = TomoInputConfig {
        phase_source: PhaseSource::Estimated,
        ..tomo
    };
    assert!(collect_tomo_set(&[trace], source.ideal_mode(), &estimated).is_err());
}

#[test]
fn estimated_phases_reconstruct_like_true_phases() {
    let mut cfg = RunConfig::default();
    cfg.acquisition.noise.electronic = false;
    cfg.sweep.fc_list_hz = vec![cfg.acquisition.fc_exp_hz];
    cfg.sweep.n_list = vec![1];
    cfg.sweep.compare_mode_sources = false;
    cfg.sweep.wigner_panels.clear();
    cfg.tomography.iterations = 300;
    let w = |phase_source: PhaseSource| {
        let mut c = cfg.clone();
        c.tomography.phase_source = phase_source;
        let report = cvchain::pipeline::run_sweep(&c).unwrap();
        let rec = report.baseline.reconstruction(ModeSource::Reconstructed).unwrap();
        rec.w00
    };
    let truth = w(PhaseSource::Truth);
    let estimated = w(PhaseSource::Estimated);
    assert!(truth < -0.05, "{truth}");
    assert!((truth - estimated).abs() < 0.01, "truth {truth} vs estimated {estimated}");
}
