//! File formats: the binary trace container and the CSV/TOML side files.
//! Every reader treats its input as untrusted.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{CMatrix, DensityMatrix};
use crate::error::{Error, Result};
use crate::mode::{Grid, TemporalMode};
use crate::quadrature::QuadratureSample;
use crate::synth::{HomodyneTrace, TraceSource, TruthRecord};
use crate::tomography::{EfficiencyMode, WignerGrid};

pub const TRACE_MAGIC: &[u8; 4] = b"CVTR";
pub const TRACE_VERSION: u32 = 1;
pub const TRACE_HEADER_LEN: usize = 48;

/// Upper bound on samples per trace accepted from a file.
pub const MAX_SAMPLES_PER_TRACE: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceFileHeader {
    pub n_traces: u64,
    pub dt: f64,
    pub t_start: f64,
    pub samples_per_trace: u64,
    pub config_hash: u64,
}

impl TraceFileHeader {
    pub fn record_len(&self) -> u64 {
        16 + 8 * self.samples_per_trace
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.t_start, self.dt, self.samples_per_trace as usize)
    }

    pub fn encode(&self) -> [u8; TRACE_HEADER_LEN] {
        let mut out = [0u8; TRACE_HEADER_LEN];
        out[0..4].copy_from_slice(TRACE_MAGIC);
        out[4..8].copy_from_slice(&TRACE_VERSION.to_le_bytes());
        out[8..16].copy_from_slice(&self.n_traces.to_le_bytes());
        out[16..24].copy_from_slice(&self.dt.to_le_bytes());
        out[24..32].copy_from_slice(&self.t_start.to_le_bytes());
        out[32..40].copy_from_slice(&self.samples_per_trace.to_le_bytes());
        out[40..48].copy_from_slice(&self.config_hash.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::format("trace file header", reason);
        if bytes.len() < TRACE_HEADER_LEN {
            return Err(bad("shorter than 48 bytes"));
        }
        if &bytes[0..4] != TRACE_MAGIC {
            return Err(bad("missing CVTR magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != TRACE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let header = Self {
            n_traces: u64_at(8),
            dt: f64_at(16),
            t_start: f64_at(24),
            samples_per_trace: u64_at(32),
            config_hash: u64_at(40),
        };
        if !(header.dt > 0.0 && header.dt.is_finite()) {
            return Err(bad("sampling step must be positive and finite"));
        }
        if !header.t_start.is_finite() {
            return Err(bad("start time must be finite"));
        }
        if header.samples_per_trace == 0 || header.samples_per_trace > MAX_SAMPLES_PER_TRACE {
            return Err(bad(&format!(
                "samples per trace {} outside 1..={MAX_SAMPLES_PER_TRACE}",
                header.samples_per_trace
            )));
        }
        if header.n_traces.checked_mul(header.record_len()).is_none() {
            return Err(bad("trace count overflows the file size"));
        }
        Ok(header)
    }

    fn body_len(&self) -> Result<u64> {
        self.n_traces
            .checked_mul(self.record_len())
            .and_then(|b| b.checked_add(TRACE_HEADER_LEN as u64))
            .ok_or_else(|| Error::format("trace file header", "size overflow"))
    }
}

fn encode_record(trace: &HomodyneTrace, out: &mut Vec<u8>) {
    out.extend_from_slice(&trace.trace_id.to_le_bytes());
    out.extend_from_slice(&trace.true_phase.unwrap_or(f64::NAN).to_le_bytes());
    for v in &trace.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_record(header: &TraceFileHeader, bytes: &[u8]) -> Result<HomodyneTrace> {
    let trace_id = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
    let phase = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let true_phase = if phase.is_nan() {
        None
    } else if phase.is_finite() {
        Some(phase)
    } else {
        return Err(Error::format("trace record", format!("trace {trace_id} has an infinite phase")));
    };
    let samples: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("trace record", format!("trace {trace_id} has non-finite samples")));
    }
    Ok(HomodyneTrace {
        samples,
        dt: header.dt,
        t_start: header.t_start,
        true_phase,
        trace_id,
    })
}

/// Streams traces into the binary container.
pub struct TraceWriter<W: Write> {
    inner: W,
    header: TraceFileHeader,
    written: u64,
    buf: Vec<u8>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut inner: W, header: TraceFileHeader) -> Result<Self> {
        inner
            .write_all(&header.encode())
            .map_err(|e| Error::io("<trace stream>", e))?;
        Ok(Self {
            inner,
            header,
            written: 0,
            buf: Vec::new(),
        })
    }

    pub fn write(&mut self, trace: &HomodyneTrace) -> Result<()> {
        if self.written >= self.header.n_traces {
            return Err(Error::param("trace", "more traces than announced in the header"));
        }
        if trace.samples.len() as u64 != self.header.samples_per_trace
            || trace.dt.to_bits() != self.header.dt.to_bits()
            || trace.t_start.to_bits() != self.header.t_start.to_bits()
        {
            return Err(Error::GridMismatch(format!(
                "trace {} does not match the file grid",
                trace.trace_id
            )));
        }
        self.buf.clear();
        encode_record(trace, &mut self.buf);
        self.inner
            .write_all(&self.buf)
            .map_err(|e| Error::io("<trace stream>", e))?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.n_traces {
            return Err(Error::param(
                "trace",
                format!("wrote {} of {} announced traces", self.written, self.header.n_traces),
            ));
        }
        self.inner.flush().map_err(|e| Error::io("<trace stream>", e))?;
        Ok(self.inner)
    }
}

/// Parses a whole in-memory trace file.
pub fn decode_trace_file(bytes: &[u8]) -> Result<(TraceFileHeader, Vec<HomodyneTrace>)> {
    let header = TraceFileHeader::decode(bytes)?;
    let expected = header.body_len()?;
    if bytes.len() as u64 != expected {
        return Err(Error::format(
            "trace file",
            format!("length {} but header implies {expected}", bytes.len()),
        ));
    }
    let rec = header.record_len() as usize;
    let traces = bytes[TRACE_HEADER_LEN..]
        .chunks_exact(rec)
        .map(|r| decode_record(&header, r))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, traces))
}

pub fn write_trace_file<'a>(
    path: &Path,
    header: TraceFileHeader,
    traces: impl IntoIterator<Item = &'a HomodyneTrace>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = TraceWriter::new(BufWriter::new(file), header)?;
    for t in traces {
        w.write(t)?;
    }
    w.finish()?;
    Ok(())
}

/// Random-access reader over a trace file on disk.
#[derive(Debug)]
pub struct FileTraceSource {
    path: PathBuf,
    header: TraceFileHeader,
    file: Mutex<File>,
}

impl FileTraceSource {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut head = [0u8; TRACE_HEADER_LEN];
        file.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
        let header = TraceFileHeader::decode(&head)?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        if len != header.body_len()? {
            return Err(Error::format(
                "trace file",
                format!("{} is {len} bytes but its header implies {}", path.display(), header.body_len()?),
            ));
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            file: Mutex::new(file),
        })
    }

    pub fn header(&self) -> &TraceFileHeader {
        &self.header
    }
}

impl TraceSource for FileTraceSource {
    fn len(&self) -> usize {
        self.header.n_traces as usize
    }

    fn grid(&self) -> Grid {
        self.header.grid()
    }

    fn trace(&self, index: usize) -> Result<HomodyneTrace> {
        if index as u64 >= self.header.n_traces {
            return Err(Error::param("index", format!("trace {index} out of range")));
        }
        let rec = self.header.record_len();
        let mut buf = vec![0u8; rec as usize];
        {
            let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
            f.seek(SeekFrom::Start(TRACE_HEADER_LEN as u64 + index as u64 * rec))
                .and_then(|_| f.read_exact(&mut buf))
                .map_err(|e| Error::io(&self.path, e))?;
        }
        decode_record(&self.header, &buf)
    }
}

fn csv_error(what: &'static str) -> impl Fn(csv::Error) -> Error {
    move |e| Error::format(what, e.to_string())
}

fn write_csv<T: Serialize>(path: &Path, what: &'static str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row).map_err(csv_error(what))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(
    input: impl Read,
    what: &'static str,
    header: &[&str],
) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found = r.headers().map_err(csv_error(what))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::format(
            what,
            format!("expected header {:?}, found {:?}", header, found.iter().collect::<Vec<_>>()),
        ));
    }
    r.deserialize().map(|row| row.map_err(csv_error(what))).collect()
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::format(what, "non-finite value"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    trace_id: u64,
    theta: f64,
    #[serde(rename = "X_true")]
    x_true: f64,
}

pub fn write_truth_csv(path: &Path, records: &[TruthRecord]) -> Result<()> {
    write_csv(
        path,
        "truth CSV",
        records.iter().map(|r| TruthRow {
            trace_id: r.trace_id,
            theta: r.theta,
            x_true: r.x_true,
        }),
    )
}

pub fn parse_truth_csv(input: impl Read) -> Result<Vec<TruthRecord>> {
    let rows: Vec<TruthRow> = read_csv(input, "truth CSV", &["trace_id", "theta", "X_true"])?;
    rows.into_iter()
        .map(|r| {
            finite("truth CSV", &[r.theta, r.x_true])?;
            Ok(TruthRecord {
                trace_id: r.trace_id,
                theta: r.theta,
                x_true: r.x_true,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TomoRow {
    trace_id: u64,
    theta: f64,
    #[serde(rename = "X")]
    x: f64,
}

pub fn write_tomo_csv(path: &Path, samples: &[QuadratureSample]) -> Result<()> {
    write_csv(
        path,
        "tomography CSV",
        samples.iter().map(|s| TomoRow {
            trace_id: s.trace_id,
            theta: s.theta,
            x: s.x,
        }),
    )
}

pub fn parse_tomo_csv(input: impl Read) -> Result<Vec<QuadratureSample>> {
    let rows: Vec<TomoRow> = read_csv(input, "tomography CSV", &["trace_id", "theta", "X"])?;
    rows.into_iter()
        .map(|r| {
            QuadratureSample::new(r.x, r.theta, r.trace_id)
                .map_err(|e| Error::format("tomography CSV", e.to_string()))
        })
        .collect()
}

pub fn read_tomo_csv(path: &Path) -> Result<Vec<QuadratureSample>> {
    parse_tomo_csv(open(path)?)
}

/// Metadata stored next to a tomography CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomoSidecar {
    pub eta_hd: f64,
    pub fc_hz: f64,
    pub fs_sps: f64,
    pub mode_hash: String,
    pub efficiency_mode: EfficiencyMode,
    pub fock_dim: usize,
}

impl TomoSidecar {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::format("tomography sidecar", e.to_string()))?;
        if !(s.eta_hd > 0.0 && s.eta_hd <= 1.0) {
            return Err(Error::format("tomography sidecar", "eta_hd outside (0,1]"));
        }
        if !(s.fc_hz > 0.0 && s.fs_sps > 0.0) || !s.fc_hz.is_finite() || !s.fs_sps.is_finite() {
            return Err(Error::format("tomography sidecar", "rates must be positive"));
        }
        if s.fock_dim < 2 || s.fock_dim > 64 {
            return Err(Error::format("tomography sidecar", "fock_dim outside 2..=64"));
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Hex SHA-256 prefix identifying a mode profile.
pub fn mode_hash(mode: &TemporalMode) -> String {
    let mut h = Sha256::new();
    h.update(mode.dt().to_le_bytes());
    h.update(mode.t_start().to_le_bytes());
    for v in mode.samples() {
        h.update(v.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ModeRow {
    t_seconds: f64,
    u_value: f64,
}

pub fn write_mode_csv(path: &Path, mode: &TemporalMode) -> Result<()> {
    write_csv(
        path,
        "mode CSV",
        (0..mode.len()).map(|k| ModeRow {
            t_seconds: mode.time(k),
            u_value: mode.samples()[k],
        }),
    )
}

/// Reads a mode profile; the time column must be uniformly spaced.
pub fn parse_mode_csv(input: impl Read) -> Result<TemporalMode> {
    let rows: Vec<ModeRow> = read_csv(input, "mode CSV", &["t_seconds", "u_value"])?;
    if rows.len() < 2 {
        return Err(Error::format("mode CSV", "need at least two rows"));
    }
    for r in &rows {
        finite("mode CSV", &[r.t_seconds, r.u_value])?;
    }
    let t0 = rows[0].t_seconds;
    let dt = (rows[rows.len() - 1].t_seconds - t0) / (rows.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::format("mode CSV", "time column must increase"));
    }
    for (k, r) in rows.iter().enumerate() {
        if ((r.t_seconds - t0) / dt - k as f64).abs() > 1e-6 {
            return Err(Error::format("mode CSV", format!("row {k} breaks uniform spacing")));
        }
    }
    TemporalMode::new(rows.iter().map(|r| r.u_value).collect(), dt, t0)
        .map_err(|e| Error::format("mode CSV", e.to_string()))
}

pub fn read_mode_csv(path: &Path) -> Result<TemporalMode> {
    parse_mode_csv(open(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct DensityRow {
    row: usize,
    col: usize,
    re: f64,
    im: f64,
}

pub fn write_density_csv(path: &Path, rho: &DensityMatrix) -> Result<()> {
    let m = rho.entries();
    let d = rho.dim();
    write_csv(
        path,
        "density CSV",
        (0..d * d).map(|k| {
            let (row, col) = (k / d, k % d);
            DensityRow {
                row,
                col,
                re: m[(row, col)].re,
                im: m[(row, col)].im,
            }
        }),
    )
}

/// Reads a density matrix written as `row,col,re,im`, one line per entry.
pub fn parse_density_csv(input: impl Read) -> Result<DensityMatrix> {
    let rows: Vec<DensityRow> = read_csv(input, "density CSV", &["row", "col", "re", "im"])?;
    let d = (rows.len() as f64).sqrt().round() as usize;
    if d == 0 || d * d != rows.len() || d > 64 {
        return Err(Error::format("density CSV", format!("{} entries is not a square <= 64x64", rows.len())));
    }
    let mut m = CMatrix::zeros(d, d);
    let mut seen = vec![false; d * d];
    for r in rows {
        finite("density CSV", &[r.re, r.im])?;
        if r.row >= d || r.col >= d || std::mem::replace(&mut seen[r.row * d + r.col], true) {
            return Err(Error::format("density CSV", format!("bad or repeated index ({}, {})", r.row, r.col)));
        }
        m[(r.row, r.col)] = num_complex::Complex64::new(r.re, r.im);
    }
    DensityMatrix::new(m).map_err(|e| Error::format("density CSV", e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct WignerRow {
    x: f64,
    p: f64,
    #[serde(rename = "W")]
    w: f64,
}

pub fn write_wigner_csv(path: &Path, grid: &WignerGrid) -> Result<()> {
    let np = grid.p.len();
    write_csv(
        path,
        "Wigner CSV",
        (0..grid.values.len()).map(|k| WignerRow {
            x: grid.x[k / np],
            p: grid.p[k % np],
            w: grid.values[k],
        }),
    )
}

/// Reads a Wigner grid in x-major order.
pub fn parse_wigner_csv(input: impl Read) -> Result<WignerGrid> {
    let rows: Vec<WignerRow> = read_csv(input, "Wigner CSV", &["x", "p", "W"])?;
    if rows.is_empty() {
        return Err(Error::format("Wigner CSV", "no rows"));
    }
    let np = rows.iter().take_while(|r| r.x == rows[0].x).count();
    if rows.len() % np != 0 {
        return Err(Error::format("Wigner CSV", "rows do not form a rectangular grid"));
    }
    let nx = rows.len() / np;
    let p: Vec<f64> = rows[..np].iter().map(|r| r.p).collect();
    let x: Vec<f64> = (0..nx).map(|i| rows[i * np].x).collect();
    for (k, r) in rows.iter().enumerate() {
        finite("Wigner CSV", &[r.x, r.p, r.w])?;
        if r.x != x[k / np] || r.p != p[k % np] {
            return Err(Error::format("Wigner CSV", format!("row {k} is off the grid")));
        }
    }
    Ok(WignerGrid {
        x,
        p,
        values: rows.iter().map(|r| r.w).collect(),
    })
}

/// One line of the (f_c, f_s) heat map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub fc_hz: f64,
    pub fs_sps: f64,
    pub nyquist_ok: bool,
    #[serde(rename = "W00")]
    pub w00: f64,
    pub fidelity: f64,
    pub mismatch: f64,
    pub converged_at: Option<usize>,
}

pub const HEATMAP_HEADER: [&str; 7] = [
    "fc_hz",
    "fs_sps",
    "nyquist_ok",
    "W00",
    "fidelity",
    "mismatch",
    "converged_at",
];

pub fn write_heatmap_csv(path: &Path, rows: &[HeatmapRow]) -> Result<()> {
    write_csv(path, "heatmap CSV", rows.iter())
}

pub fn parse_heatmap_csv(input: impl Read) -> Result<Vec<HeatmapRow>> {
    let rows: Vec<HeatmapRow> = read_csv(input, "heatmap CSV", &HEATMAP_HEADER)?;
    for r in &rows {
        if !(r.fc_hz > 0.0 && r.fs_sps > 0.0) || !r.fc_hz.is_finite() || !r.fs_sps.is_finite() {
            return Err(Error::format("heatmap CSV", "rates must be positive and finite"));
        }
    }
    Ok(rows)
}

pub fn read_heatmap_csv(path: &Path) -> Result<Vec<HeatmapRow>> {
    parse_heatmap_csv(open(path)?)
}
