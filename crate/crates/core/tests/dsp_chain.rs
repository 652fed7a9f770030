use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use cvchain::config::{ModeSource, RunConfig};
use cvchain::dsp::{apply_bandwidth, decimate, decimate_with_offset, extract_window, window_len};
use cvchain::mode::ideal_mode_on_grid;
use cvchain::pipeline::run_sweep;
use cvchain::quadrature::project_quadrature;
use cvchain::rng::{stream, Domain};
use cvchain::synth::NoiseSwitches;
use cvchain::{ButterworthSpec, HeraldedStateModel, HomodyneTrace};

fn trace(samples: Vec<f64>, dt: f64) -> HomodyneTrace {
    HomodyneTrace::new(samples, dt, 0.0, 0).unwrap()
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn far_cutoff_is_identity() {
    let dt = 0.2e-9;
    let mut rng = stream(10, Domain::Aux(0), 0);
    let x: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() - 0.5).collect();
    let spec = ButterworthSpec::unit(1e6 / dt).unwrap();
    let y = apply_bandwidth(&trace(x.clone(), dt), &spec).unwrap();
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (a, b) in x.iter().zip(&y.samples) {
        assert!((a - b).abs() <= 1e-9 * scale);
    }
}

#[test]
fn sinusoid_at_cutoff_loses_3_db() {
    let (len, dt) = (1000usize, 1e-9);
    let bin = 37;
    let fc = bin as f64 / (len as f64 * dt);
    for phase in [0.0, 0.9] {
        let x: Vec<f64> = (0..len).map(|k| (TAU * bin as f64 * k as f64 / len as f64 + phase).cos()).collect();
        let y = apply_bandwidth(&trace(x.clone(), dt), &ButterworthSpec::unit(fc).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&y.samples) {
            assert!((b - a / 2f64.sqrt()).abs() < 1e-6);
        }
    }
}

#[test]
fn constant_trace_passes() {
    let y = apply_bandwidth(&trace(vec![0.75; 333], 0.2e-9), &ButterworthSpec::unit(11e6).unwrap()).unwrap();
    assert!(y.samples.iter().all(|v| (v - 0.75).abs() < 1e-12));
}

#[test]
fn decimation_arithmetic() {
    let t = trace((0..1000).map(f64::from).collect(), 0.2e-9);
    let mut rng = stream(11, Domain::Aux(0), 0);
    let same = decimate(&t, 1, &mut rng).unwrap();
    assert_eq!(same, t);
    for _ in 0..10 {
        let d = decimate(&t, 4, &mut rng).unwrap();
        assert_eq!(d.len(), 250);
        assert!((d.dt - 0.8e-9).abs() < 1e-21);
        let o = d.samples[0] as usize;
        assert!(o < 4);
        assert!(d.samples.iter().enumerate().all(|(k, &v)| v as usize == o + 4 * k));
    }
    assert!(decimate(&t, 0, &mut rng).is_err());
    assert!(decimate_with_offset(&t, 4, 4).is_err());
}

#[test]
fn offsets_are_uniform() {
    let t = trace((0..1000).map(f64::from).collect(), 1.0);
    let mut rng = stream(12, Domain::Aux(0), 0);
    let mut counts = [0usize; 7];
    for _ in 0..7000 {
        counts[decimate(&t, 7, &mut rng).unwrap().samples[0] as usize] += 1;
    }
    for c in counts {
        assert!((c as f64 - 1000.0).abs() < 3.0 * 1000f64.sqrt(), "{counts:?}");
    }
}

#[test]
fn window_lengths() {
    let dt = 0.2e-9;
    let span: Vec<f64> = (0..2000).map(f64::from).collect();
    let t = HomodyneTrace::new(span, dt, -1.3e-6, 0).unwrap();
    let full = [t.t_start, t.t_start + t.len() as f64 * dt];
    assert_eq!(extract_window(&t, full).unwrap(), t);
    let win = [-1.25e-6, -1.0e-6];
    assert!(window_len(win, dt).abs_diff(1250) <= 1);
    assert!(extract_window(&t, win).unwrap().len().abs_diff(1250) <= 1);
    let d = decimate_with_offset(&t, 21, 5).unwrap();
    let w = extract_window(&d, win).unwrap();
    assert!((59..=60).contains(&w.len()), "{}", w.len());
    assert!(extract_window(&t, [-2e-6, -1e-6]).is_err());
}

#[test]
fn white_noise_projection_is_alias_invariant() {
    // Per-sample variance V/dt keeps its value under decimation while the
    // projection weight grows with dt_n = n·dt, so Var[X_n] = n·V exactly
    // for any offset.
    let dt: f64 = 0.2e-9;
    let len = 3000;
    let (gamma, t0) = (9.3e6, 0.45e-6);
    for n in [1usize, 3, 9, 21, 33] {
        let mut xs = Vec::with_capacity(10_000);
        for id in 0..10_000u64 {
            let mut rng = stream(13, Domain::Aux(n as u64), id);
            let v: Vec<f64> = (0..len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * (0.5 / dt).sqrt()
                })
                .collect();
            let d = decimate(&trace(v, dt), n, &mut rng).unwrap();
            let u = ideal_mode_on_grid(gamma, t0, d.grid()).unwrap();
            xs.push(project_quadrature(&d, &u).unwrap() / (n as f64).sqrt());
        }
        let var = variance(&xs);
        assert!((var / 0.5 - 1.0).abs() < 0.05, "n = {n}: {var}");
    }
}

#[test]
fn pipeline_vacuum_stays_at_shot_noise_for_every_rate() {
    let mut cfg = RunConfig::default();
    let acq = &mut cfg.acquisition;
    acq.n_traces = 10_000;
    acq.side_region_s = 0.1e-6;
    acq.state = HeraldedStateModel {
        r: 0.0,
        xi: 0.0,
        eta_prep: 1.0,
        fock_dim: 8,
    };
    acq.noise = NoiseSwitches {
        background: true,
        electronic: false,
        intrinsic_bandwidth: true,
    };
    cfg.tomography.iterations = 200;
    cfg.sweep.mode_source = ModeSource::Ideal;
    cfg.sweep.compare_mode_sources = false;
    cfg.sweep.fc_list_hz = vec![301e6, 51e6];
    cfg.sweep.n_list = vec![1, 9, 21, 33];
    cfg.sweep.wigner_panels.clear();
    let report = run_sweep(&cfg).unwrap();
    for p in &report.points {
        let rec = p.reconstruction(ModeSource::Ideal).unwrap();
        let x: Vec<f64> = rec.samples.iter().map(|s| s.x).collect();
        let var = variance(&x);
        assert!(
            (var / 0.5 - 1.0).abs() < 0.05,
            "fc {:e} n {}: {var}",
            p.spec.fc_hz,
            p.spec.n
        );
        // Vacuum reconstructs to vacuum wherever it is sampled.
        assert!((rec.w00 - 1.0 / PI).abs() < 0.05, "{}", rec.w00);
    }
}
