use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use rand::Rng;

use cvchain::dsp::extract_window;
use cvchain::mode::ideal_mode_on_grid;
use cvchain::quadrature::project_quadrature;
use cvchain::rng::{stream, Domain};
use cvchain::state::{marginal_pdf, squeezed_variance, MarginalSampler};
use cvchain::synth::{scan_phases, synth_dataset, NoiseSwitches, Synthesizer};
use cvchain::{heralded_density, AcquisitionConfig, DensityMatrix, HeraldedStateModel, HomodyneTrace, TemporalMode};

fn state(r: f64, xi: f64, eta_prep: f64, fock_dim: usize) -> HeraldedStateModel {
    HeraldedStateModel {
        r,
        xi,
        eta_prep,
        fock_dim,
    }
}

fn ln_fact(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// |⟨2n|S(r)|0⟩|² = tanh^{2n} r (2n)! / (4^n (n!)² cosh r).
fn squeezed_even(r: f64, n: usize) -> f64 {
    (2.0 * n as f64 * r.tanh().ln() + ln_fact(2 * n) - 2.0 * n as f64 * 2f64.ln() - 2.0 * ln_fact(n)).exp() / r.cosh()
}

/// |⟨2n+1|S(r)|1⟩|² = tanh^{2n} r (2n+1)! / (4^n (n!)² cosh³ r).
fn squeezed_odd(r: f64, n: usize) -> f64 {
    (2.0 * n as f64 * r.tanh().ln() + ln_fact(2 * n + 1) - 2.0 * n as f64 * 2f64.ln() - 2.0 * ln_fact(n)).exp()
        / r.cosh().powi(3)
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1])).sum()
}

fn axis(half: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect()
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn quiet(cfg: &mut AcquisitionConfig) {
    cfg.noise = NoiseSwitches {
        background: false,
        electronic: false,
        intrinsic_bandwidth: false,
    };
}

fn small_cfg() -> AcquisitionConfig {
    AcquisitionConfig {
        side_region_s: 0.1e-6,
        ..AcquisitionConfig::default()
    }
}

#[test]
fn squeezed_number_populations() {
    let (r, xi) = (0.3, 0.85);
    let rho = heralded_density(&state(r, xi, 1.0, 12)).unwrap();
    for n in 0..6 {
        let even = (1.0 - xi) * squeezed_even(r, n);
        let odd = xi * squeezed_odd(r, n);
        assert!((rho.population(2 * n) - even).abs() < 1e-6, "n = {n}");
        assert!((rho.population(2 * n + 1) - odd).abs() < 1e-6, "n = {n}");
    }
}

#[test]
fn identity_states() {
    let vac = heralded_density(&state(0.0, 0.0, 0.6, 8)).unwrap();
    let expect = DensityMatrix::vacuum(8).unwrap();
    assert_eq!(vac.entries(), expect.entries());
    let one = heralded_density(&state(0.0, 1.0, 1.0, 8)).unwrap();
    assert_eq!(one.entries(), DensityMatrix::fock(1, 8).unwrap().entries());
}

#[test]
fn marginal_anchor_values() {
    let vac = DensityMatrix::vacuum(10).unwrap();
    let one = DensityMatrix::fock(1, 10).unwrap();
    for theta in [0.0, 0.7, 2.0] {
        let p = marginal_pdf(&vac, theta, &[0.0])[0];
        assert!((p - 1.0 / PI.sqrt()).abs() < 1e-12);
        assert!(marginal_pdf(&one, theta, &[0.0])[0].abs() < 1e-15);
    }
}

#[test]
fn squeezed_vacuum_moments() {
    let r = 0.5;
    let rho = heralded_density(&state(r, 0.0, 1.0, 24)).unwrap();
    let x = axis(8.0, 8001);
    for (theta, expect) in [(0.0, (-2.0 * r).exp() / 2.0), (FRAC_PI_2, (2.0 * r).exp() / 2.0)] {
        let p = marginal_pdf(&rho, theta, &x);
        let m2: Vec<f64> = x.iter().zip(&p).map(|(x, p)| x * x * p).collect();
        let var = trapezoid(&x, &m2);
        assert!((var - expect).abs() < 1e-3, "theta = {theta}: {var} vs {expect}");
    }
}

#[test]
fn sampled_variances() {
    let mut rng = stream(1, Domain::Aux(0), 0);
    let draws = 1_000_000;
    let vac = MarginalSampler::new(&DensityMatrix::vacuum(12).unwrap()).at(0.3);
    let v: Vec<f64> = (0..draws).map(|_| vac.sample(&mut rng)).collect();
    assert!((variance(&v) - 0.5).abs() < 0.003, "{}", variance(&v));
    // ⟨1|X²|1⟩ = (2·1 + 1)/2.
    let one = MarginalSampler::new(&DensityMatrix::fock(1, 12).unwrap()).at(1.1);
    let v: Vec<f64> = (0..draws).map(|_| one.sample(&mut rng)).collect();
    assert!((variance(&v) - 1.5).abs() < 0.01, "{}", variance(&v));
}

#[test]
fn sampled_cdf_matches_marginal() {
    let rho = heralded_density(&state(0.43, 0.8, 0.85, 12)).unwrap();
    let sampler = MarginalSampler::new(&rho);
    let mut rng = stream(2, Domain::Aux(0), 0);
    for theta in [0.0, 1.0, FRAC_PI_2] {
        let table = sampler.at(theta);
        let mut draws: Vec<f64> = (0..1_000_000).map(|_| table.sample(&mut rng)).collect();
        draws.sort_by(f64::total_cmp);
        // Analytic CDF by Simpson integration of the marginal on a fine grid.
        let x = axis(9.0, 36001);
        let p = marginal_pdf(&rho, theta, &x);
        let h = x[1] - x[0];
        let mut cdf = vec![0.0; x.len()];
        for i in (2..x.len()).step_by(2) {
            cdf[i] = cdf[i - 2] + h / 3.0 * (p[i - 2] + 4.0 * p[i - 1] + p[i]);
            cdf[i - 1] = cdf[i - 2] + 0.5 * h * (p[i - 2] + p[i - 1]);
        }
        let n = draws.len() as f64;
        let mut ks = 0.0f64;
        for (k, d) in draws.iter().enumerate().step_by(97) {
            let i = (((d + 9.0) / h).floor() as usize).min(x.len() - 2);
            let frac = (d - x[i]) / h;
            let f = cdf[i] + frac * (cdf[i + 1] - cdf[i]);
            ks = ks.max((k as f64 / n - f).abs()).max(((k + 1) as f64 / n - f).abs());
        }
        assert!(ks < 0.005, "theta = {theta}: KS {ks}");
    }
}

#[test]
fn noiseless_projection_returns_injected_quadrature() {
    let mut cfg = small_cfg();
    quiet(&mut cfg);
    let synth = Synthesizer::new(&cfg, cfg.ideal_mode().unwrap()).unwrap();
    let mut rng = stream(3, Domain::Aux(0), 0);
    for id in 0..20 {
        let theta = rng.random::<f64>() * TAU;
        let (trace, truth) = synth.trace(theta, id, &mut rng);
        let x = project_quadrature(&trace, synth.mode()).unwrap();
        assert!((x - truth.x_true).abs() < 1e-9);
        assert_eq!(trace.true_phase, Some(theta));
    }
}

/// Unit-energy boxcar on [t1, t2] sampled on `grid`, zero elsewhere.
fn boxcar(trace: &HomodyneTrace, t1: f64, t2: f64) -> TemporalMode {
    let g = trace.grid();
    let samples = (0..g.len)
        .map(|k| if (t1..t2).contains(&g.time(k)) { 1.0 } else { 0.0 })
        .collect();
    TemporalMode::new(samples, g.dt, g.t_start).unwrap().normalized().unwrap()
}

#[test]
fn vacuum_projections_have_shot_noise_variance() {
    let mut cfg = small_cfg();
    cfg.state = state(0.0, 0.0, 1.0, 12);
    cfg.noise = NoiseSwitches {
        background: true,
        electronic: false,
        intrinsic_bandwidth: false,
    };
    let synth = Synthesizer::new(&cfg, cfg.ideal_mode().unwrap()).unwrap();
    let probe = synth.trace(0.0, 0, &mut stream(4, Domain::Aux(0), 0)).0;
    let side = boxcar(&probe, -1.0e-6, -0.9e-6);
    assert!(side.inner(synth.mode()).unwrap().abs() < 1e-12);
    let mut on_mode = Vec::new();
    let mut off_mode = Vec::new();
    for id in 0..10_000u64 {
        let (trace, _) = synth.trace(id as f64 * 0.37, id, &mut stream(4, Domain::Aux(1), id));
        on_mode.push(project_quadrature(&trace, synth.mode()).unwrap());
        off_mode.push(project_quadrature(&trace, &side).unwrap());
    }
    for v in [variance(&on_mode), variance(&off_mode)] {
        assert!((v / 0.5 - 1.0).abs() < 0.05, "{v}");
    }
}

/// Per-sample variance of the trace samples after t0, where u_id vanishes.
fn tail_sample_variance(cfg: &AcquisitionConfig, traces: u64) -> f64 {
    let synth = Synthesizer::new(cfg, cfg.ideal_mode().unwrap()).unwrap();
    let mut values = Vec::new();
    for id in 0..traces {
        let (trace, _) = synth.trace(0.0, id, &mut stream(5, Domain::Aux(2), id));
        let g = trace.grid();
        values.extend((0..g.len).filter(|&k| g.time(k) > cfg.t0_s + 5e-9).map(|k| trace.samples[k]));
    }
    variance(&values)
}

#[test]
fn electronic_noise_sits_12_db_below_shot_noise() {
    let mut cfg = small_cfg();
    cfg.state = state(0.0, 0.0, 1.0, 12);
    cfg.noise = NoiseSwitches {
        background: false,
        electronic: true,
        intrinsic_bandwidth: false,
    };
    let electronic = tail_sample_variance(&cfg, 200);
    cfg.noise = NoiseSwitches {
        background: true,
        electronic: false,
        intrinsic_bandwidth: false,
    };
    let vacuum = tail_sample_variance(&cfg, 200);
    let ratio = electronic / vacuum;
    let expect = 10f64.powf(-1.2);
    assert!((expect - 0.063).abs() < 1e-3);
    assert!((ratio / expect - 1.0).abs() < 0.05, "{ratio}");
}

#[test]
fn datasets_are_reproducible() {
    let cfg = AcquisitionConfig {
        n_traces: 100,
        ..small_cfg()
    };
    let a: Vec<_> = synth_dataset(&cfg).unwrap().collect();
    let b: Vec<_> = synth_dataset(&cfg).unwrap().collect();
    assert_eq!(a.len(), 100);
    for ((ta, ra), (tb, rb)) in a.iter().zip(&b) {
        assert_eq!(ra, rb);
        let bits = |t: &HomodyneTrace| t.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ta), bits(tb));
    }
    for (i, (t, r)) in a.iter().enumerate() {
        assert_eq!(t.trace_id, i as u64);
        assert_eq!(r.trace_id, i as u64);
    }
}

#[test]
fn phase_scan_covers_the_circle_uniformly() {
    let cfg = AcquisitionConfig {
        n_traces: 43_000,
        ..AcquisitionConfig::default()
    };
    let phases = scan_phases(&cfg).unwrap();
    assert_eq!(phases.len(), 43_000);
    let mut bins = [0usize; 12];
    for p in &phases {
        assert!((0.0..TAU).contains(p));
        bins[((p / TAU) * 12.0) as usize] += 1;
    }
    let expect = 43_000.0 / 12.0;
    for count in bins {
        assert!((count as f64 - expect).abs() <= 3.0 * expect.sqrt(), "{bins:?}");
    }
}

#[test]
fn background_projection_off_the_signal_mode_is_squeezed_noise() {
    let mut cfg = small_cfg();
    cfg.state = state(0.5, 0.0, 1.0, 24);
    cfg.noise = NoiseSwitches {
        background: true,
        electronic: false,
        intrinsic_bandwidth: false,
    };
    let synth = Synthesizer::new(&cfg, cfg.ideal_mode().unwrap()).unwrap();
    let probe = synth.trace(0.0, 0, &mut stream(6, Domain::Aux(0), 0)).0;
    let (t1, t2) = (-1.0e-6, -0.95e-6);
    let mode = boxcar(&probe, t1, t2);
    let center = cfg.window_center();
    for (j, theta) in [0.0, FRAC_PI_4, FRAC_PI_2].into_iter().enumerate() {
        // Σ u_k² V(θ_k) dt with the LO phase drifting along the mode.
        let g = mode.grid();
        let expect: f64 = (0..g.len)
            .map(|k| {
                let local = theta + cfg.scan.rate_rad_per_s * (g.time(k) - center);
                mode.samples()[k].powi(2) * squeezed_variance(0.5, local) * g.dt
            })
            .sum();
        let x: Vec<f64> = (0..8000u64)
            .map(|id| {
                let (trace, _) = synth.trace(theta, id, &mut stream(6, Domain::Aux(j as u64 + 1), id));
                project_quadrature(&trace, &mode).unwrap()
            })
            .collect();
        let v = variance(&x);
        assert!((v / expect - 1.0).abs() < 0.05, "theta = {theta}: {v} vs {expect}");
    }
}

#[test]
fn marginals_integrate_to_one() {
    let rho = heralded_density(&HeraldedStateModel { ..cvchain::config::DEFAULT_STATE }).unwrap();
    let x = axis(9.0, 3601);
    let mut rng = stream(7, Domain::Aux(0), 0);
    for _ in 0..20 {
        let theta = rng.random::<f64>() * TAU;
        let p = marginal_pdf(&rho, theta, &x);
        assert!((trapezoid(&x, &p) - 1.0).abs() < 1e-4);
    }
}

#[test]
fn subtraction_dips_the_origin_density_at_every_phase() {
    let rho = heralded_density(&state(0.35, 0.9, 0.95, 12)).unwrap();
    let vacuum_peak = 1.0 / PI.sqrt();
    for k in 0..64 {
        let theta = k as f64 * TAU / 64.0;
        assert!(marginal_pdf(&rho, theta, &[0.0])[0] < vacuum_peak, "theta = {theta}");
    }
}

#[test]
fn kitten_dataset_is_phase_covering_and_anti_squeezed_near_half_pi() {
    let cfg = AcquisitionConfig {
        n_traces: 3000,
        ..small_cfg()
    };
    let truth: Vec<_> = synth_dataset(&cfg).unwrap().map(|(_, r)| r).collect();
    let mut bins = [0usize; 12];
    for r in &truth {
        bins[((r.theta / TAU) * 12.0) as usize % 12] += 1;
    }
    assert!(bins.iter().all(|&c| c > 0), "{bins:?}");
    let anti: Vec<f64> = truth
        .iter()
        .filter(|r| (r.theta.rem_euclid(PI) - FRAC_PI_2).abs() < 0.2)
        .map(|r| r.x_true)
        .collect();
    assert!(anti.len() > 100);
    assert!(variance(&anti) > 0.5, "{}", variance(&anti));
}

#[test]
fn window_of_a_synthesized_trace_sees_the_mode() {
    let mut cfg = small_cfg();
    quiet(&mut cfg);
    let synth = Synthesizer::new(&cfg, cfg.ideal_mode().unwrap()).unwrap();
    let (trace, truth) = synth.trace(0.4, 0, &mut stream(8, Domain::Aux(0), 0));
    let win = extract_window(&trace, cfg.window_s).unwrap();
    assert_eq!(win.len(), 1250);
    let u = ideal_mode_on_grid(cfg.gamma_hz, cfg.t0_s, win.grid()).unwrap();
    // The window holds all but e^{−2κ·0.2 µs} of the mode energy.
    let x = project_quadrature(&win, &u).unwrap();
    assert!((x - truth.x_true).abs() < 1e-4 * (1.0 + truth.x_true.abs()));
}
