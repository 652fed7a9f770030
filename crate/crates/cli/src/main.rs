use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cvchain::config::{ModeSource, RunConfig};
use cvchain::io::{
    mode_hash, read_heatmap_csv, read_tomo_csv, write_density_csv, write_tomo_csv, write_trace_file, write_truth_csv,
    write_wigner_csv, FileTraceSource, TomoSidecar, TraceFileHeader,
};
use cvchain::pipeline::{
    calibrate_state, emit_reports, reconstruct_samples, run_point, run_sweep, run_sweep_on, CalibrationReport,
    CalibrationRequest, Evaluator,
};
use cvchain::synth::{synth_dataset, HomodyneTrace, TraceSource, TruthRecord};
use cvchain::tomography::{symmetric_axis, wigner, EfficiencyMode};
use cvchain::{Error, Result};

#[derive(Parser)]
#[command(name = "cvchain", version, about = "Homodyne acquisition, degradation and tomography sweeps")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bandwidth cutoffs in Hz, comma separated.
    #[arg(long, value_delimiter = ',')]
    fc_list: Option<Vec<f64>>,
    /// Decimation factors, comma separated.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    mode_source: Option<ModeSourceArg>,
    #[arg(long, value_enum)]
    efficiency_mode: Option<EfficiencyArg>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeSourceArg {
    Reconstructed,
    Ideal,
}

#[derive(Clone, Copy, ValueEnum)]
enum EfficiencyArg {
    Povm,
    Rescale,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvaluatorArg {
    Pipeline,
    Analytic,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace file and its truth record.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the state squeezing to a baseline W(0,0).
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = -0.084, allow_hyphen_values = true)]
        target: f64,
        #[arg(long, value_enum, default_value = "pipeline")]
        evaluator: EvaluatorArg,
    },
    /// Sweep the (f_c, f_s) grid and write all reports.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Trace file to analyse instead of synthesizing one.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Reconstruct one point, from traces or from a tomography CSV.
    Tomo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Tomography CSV; its metadata is read from `<file>.toml`.
        #[arg(long, conflicts_with = "traces")]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 301e6)]
        fc: f64,
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Print a heat map CSV as a table.
    Report {
        #[arg(long, default_value = "out")]
        dir: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.acquisition.seed = s;
    }
    if let Some(v) = &c.fc_list {
        cfg.sweep.fc_list_hz = v.clone();
    }
    if let Some(v) = &c.n_list {
        cfg.sweep.n_list = v.clone();
    }
    if let Some(m) = c.mode_source {
        cfg.sweep.mode_source = match m {
            ModeSourceArg::Reconstructed => ModeSource::Reconstructed,
            ModeSourceArg::Ideal => ModeSource::Ideal,
        };
    }
    if let Some(e) = c.efficiency_mode {
        cfg.tomography.efficiency_mode = match e {
            EfficiencyArg::Povm => EfficiencyMode::Povm,
            EfficiencyArg::Rescale => EfficiencyMode::Rescale,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn synth(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    mkdir(&common.out)?;
    let acq = &cfg.acquisition;
    let grid = acq.trace_grid();
    let header = TraceFileHeader {
        n_traces: acq.n_traces as u64,
        dt: grid.dt,
        t_start: grid.t_start,
        samples_per_trace: grid.len as u64,
        config_hash: cfg.hash()?,
    };
    let (traces, truth): (Vec<HomodyneTrace>, Vec<TruthRecord>) = synth_dataset(acq)?.unzip();
    let trace_path = common.out.join("traces.cvtr");
    write_trace_file(&trace_path, header, &traces)?;
    write_truth_csv(&common.out.join("truth.csv"), &truth)?;
    let cfg_path = common.out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()?).map_err(|e| Error::Io {
        path: cfg_path,
        source: e,
    })?;
    println!("wrote {} traces to {}", traces.len(), trace_path.display());
    Ok(())
}

fn calibrate(common: &Common, target: f64, evaluator: EvaluatorArg) -> Result<()> {
    let cfg = load_config(common)?;
    let s = cfg.acquisition.state;
    let mut req = CalibrationRequest::new(target, cfg.acquisition.eta_hd, s.xi, s.eta_prep);
    req.fock_dim = s.fock_dim;
    req.r_hold = Some(s.r);
    let evaluator = match evaluator {
        EvaluatorArg::Pipeline => Evaluator::Pipeline,
        EvaluatorArg::Analytic => Evaluator::Analytic,
    };
    let report = calibrate_state(&cfg, &req, evaluator)?;
    mkdir(&common.out)?;
    let path = common.out.join("calibration.toml");
    let text = toml::to_string(&report).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    println!(
        "r = {:.5}, xi = {:.4}, eta_prep = {:.4}: W(0,0) = {:.5} (target {:.5}), report in {}",
        report.state.r,
        report.state.xi,
        report.state.eta_prep,
        report.achieved_w00,
        target,
        path.display()
    );
    Ok(())
}

/// Calibration written earlier by `calibrate` into the same directory.
fn read_calibration(dir: &Path) -> Result<Option<CalibrationReport>> {
    let path = dir.join("calibration.toml");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    toml::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn sweep(common: &Common, traces: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let report = match traces {
        Some(p) => {
            let src = FileTraceSource::open(p)?;
            check_grid(&cfg, &src)?;
            run_sweep_on(&cfg, &src)?
        }
        None => run_sweep(&cfg)?,
    };
    let files = emit_reports(&report, read_calibration(&common.out)?.as_ref(), &common.out)?;
    print_results(&report.results().iter().map(|r| r.heatmap_row()).collect::<Vec<_>>());
    println!("wrote {} files to {}", files.len(), common.out.display());
    let failed = report.points.iter().filter(|p| !p.errors.is_empty()).count();
    if failed > 0 {
        log::warn!("{failed} grid points reported errors; see manifest.toml");
    }
    Ok(())
}

fn check_grid(cfg: &RunConfig, src: &FileTraceSource) -> Result<()> {
    let dt = cfg.acquisition.dt();
    if (src.grid().dt - dt).abs() > 1e-9 * dt {
        return Err(Error::Config(format!(
            "trace file step {:e} s differs from the configured 1/fs_exp_sps = {dt:e} s",
            src.grid().dt
        )));
    }
    Ok(())
}

fn tomo(common: &Common, traces: Option<&Path>, samples: Option<&Path>, fc: f64, n: usize) -> Result<()> {
    let cfg = load_config(common)?;
    mkdir(&common.out)?;
    let dim = cfg.acquisition.state.fock_dim;
    let iterations = cfg.tomography.iterations;
    let axis = symmetric_axis(cfg.tomography.wigner_half_width, cfg.tomography.wigner_points);
    let rec = if let Some(path) = samples {
        let meta = TomoSidecar::read(&sidecar_path(path))?;
        let data = read_tomo_csv(path)?;
        reconstruct_samples(&data, meta.eta_hd, meta.efficiency_mode, meta.fock_dim, iterations)?
    } else {
        let point = match traces {
            Some(p) => {
                let src = FileTraceSource::open(p)?;
                check_grid(&cfg, &src)?;
                run_point(&cfg, &src, fc, n)?
            }
            None => {
                let src = cvchain::synth::SyntheticSource::new(&cfg.acquisition)?;
                run_point(&cfg, &src, fc, n)?
            }
        };
        if !point.errors.is_empty() {
            return Err(Error::Degenerate(point.errors.join("; ")));
        }
        let source = cfg.sweep.mode_source;
        let rec = point
            .reconstruction(source)
            .cloned()
            .ok_or_else(|| Error::Degenerate("no reconstruction".into()))?;
        let mode = match source {
            ModeSource::Reconstructed => point.mode.as_ref().map(|m| m.dominant.mode.clone()),
            ModeSource::Ideal => None,
        };
        let csv = common.out.join("tomo.csv");
        write_tomo_csv(&csv, &rec.samples)?;
        TomoSidecar {
            eta_hd: cfg.acquisition.eta_hd,
            fc_hz: fc,
            fs_sps: point.fs_sps,
            mode_hash: mode.as_ref().map(mode_hash).unwrap_or_else(|| "ideal".into()),
            efficiency_mode: cfg.tomography.efficiency_mode,
            fock_dim: dim,
        }
        .write(&sidecar_path(&csv))?;
        rec
    };
    write_density_csv(&common.out.join("rho.csv"), &rec.rho)?;
    write_wigner_csv(&common.out.join("wigner.csv"), &wigner(&rec.rho, &axis, &axis))?;
    println!(
        "W(0,0) = {:.5}, converged at {}, {} samples",
        rec.w00,
        rec.converged_at.map_or("-".to_string(), |c| c.to_string()),
        rec.samples.len()
    );
    Ok(())
}

fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

fn print_results(rows: &[cvchain::io::HeatmapRow]) {
    println!(
        "{:>10} {:>12} {:>7} {:>9} {:>9} {:>9} {:>6}",
        "fc_MHz", "fs_Msps", "nyq", "W00", "fid", "mism", "conv"
    );
    for r in rows {
        println!(
            "{:>10.1} {:>12.1} {:>7} {:>9.4} {:>9.4} {:>9.4} {:>6}",
            r.fc_hz / 1e6,
            r.fs_sps / 1e6,
            r.nyquist_ok,
            r.w00,
            r.fidelity,
            r.mismatch,
            r.converged_at.map_or("-".to_string(), |c| c.to_string())
        );
    }
}

fn report(dir: &Path) -> Result<()> {
    print_results(&read_heatmap_csv(&dir.join("heatmap.csv"))?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth { common } => synth(common),
        Command::Calibrate {
            common,
            target,
            evaluator,
        } => calibrate(common, *target, *evaluator),
        Command::Sweep { common, traces } => sweep(common, traces.as_deref()),
        Command::Tomo {
            common,
            traces,
            samples,
            fc,
            n,
        } => tomo(common, traces.as_deref(), samples.as_deref(), *fc, *n),
        Command::Report { dir } => report(dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
