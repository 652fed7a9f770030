//! Temporal-mode reconstruction from the trace autocorrelation matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mode::{Grid, TemporalMode};
use crate::synth::HomodyneTrace;

/// Traces buffered before a rank-B update of the running sum.
const BATCH: usize = 64;

/// Relative eigenvalue change at which power iteration stops.
pub const EIGEN_TOL: f64 = 1e-12;

pub const MAX_POWER_ITERATIONS: usize = 20_000;

/// Relative top-eigenvalue gap below which the result is flagged degenerate.
pub const DEGENERACY_GAP: f64 = 1e-6;

/// K[j,k] = (1/N) Σ_i v_i(t_j) v_i(t_k).
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrMatrix {
    pub entries: DMatrix<f64>,
    pub dt: f64,
    pub t_start: f64,
    pub count: usize,
}

impl AutocorrMatrix {
    pub fn grid(&self) -> Grid {
        Grid::new(self.t_start, self.dt, self.entries.nrows())
    }

    /// Largest |K − Kᵀ| entry.
    pub fn asymmetry(&self) -> f64 {
        let k = &self.entries;
        let mut worst = 0.0f64;
        for i in 0..k.nrows() {
            for j in 0..i {
                worst = worst.max((k[(i, j)] - k[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Streaming sum of outer products. Buffered traces are folded in with one
/// matrix product per batch, so memory stays O(M²) for any N.
#[derive(Debug, Clone)]
pub struct AutocorrAccumulator {
    grid: Grid,
    sum: DMatrix<f64>,
    batch: DMatrix<f64>,
    filled: usize,
    count: usize,
}

impl AutocorrAccumulator {
    pub fn new(grid: Grid) -> Self {
        Self {
            grid,
            sum: DMatrix::zeros(grid.len, grid.len),
            batch: DMatrix::zeros(grid.len, BATCH),
            filled: 0,
            count: 0,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn count(&self) -> usize {
        self.count + self.filled
    }

    pub fn push(&mut self, trace: &HomodyneTrace) -> Result<()> {
        self.grid.check_compatible(&trace.grid(), "autocorrelation input")?;
        self.push_samples(&trace.samples);
        Ok(())
    }

    /// Adds samples already known to lie on the accumulator grid.
    pub fn push_samples(&mut self, samples: &[f64]) {
        debug_assert_eq!(samples.len(), self.grid.len);
        self.batch.column_mut(self.filled).copy_from_slice(samples);
        self.filled += 1;
        if self.filled == BATCH {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.filled == 0 {
            return;
        }
        let cols = self.batch.columns(0, self.filled);
        self.sum.gemm(1.0, &cols, &cols.transpose(), 1.0);
        self.count += self.filled;
        self.filled = 0;
    }

    /// Folds another accumulator's traces into this one.
    pub fn merge(&mut self, mut other: AutocorrAccumulator) -> Result<()> {
        self.grid.check_compatible(&other.grid, "autocorrelation merge")?;
        self.flush();
        other.flush();
        self.sum += other.sum;
        self.count += other.count;
        Ok(())
    }

    pub fn finish(mut self) -> Result<AutocorrMatrix> {
        self.flush();
        if self.count == 0 {
            return Err(Error::Degenerate("autocorrelation of an empty ensemble".into()));
        }
        let n = self.count as f64;
        let mut entries = self.sum / n;
        // The batched product is symmetric up to rounding; make it exact.
        entries = (&entries + entries.transpose()) * 0.5;
        Ok(AutocorrMatrix {
            entries,
            dt: self.grid.dt,
            t_start: self.grid.t_start,
            count: self.count,
        })
    }
}

/// Autocorrelation of an in-memory ensemble.
pub fn autocorr_matrix(traces: &[HomodyneTrace]) -> Result<AutocorrMatrix> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Degenerate("autocorrelation of an empty ensemble".into()))?;
    let mut acc = AutocorrAccumulator::new(first.grid());
    for t in traces {
        acc.push(t)?;
    }
    acc.finish()
}

/// Top eigenpair of K with diagnostics.
#[derive(Debug, Clone)]
pub struct DominantMode {
    pub mode: TemporalMode,
    pub eigenvalue: f64,
    /// Estimate of the next eigenvalue from deflated power iteration.
    pub second_eigenvalue: f64,
    pub iterations: usize,
    /// Set when the top eigenvalue is not separated from the next one.
    pub degenerate: bool,
}

fn power_iteration(
    k: &DMatrix<f64>,
    start: DVector<f64>,
    deflate: Option<(&DVector<f64>, f64)>,
    max_iter: usize,
) -> Option<(DVector<f64>, f64, usize)> {
    let mut v = start;
    let norm = v.norm();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v /= norm;
    let mut w = DVector::zeros(v.len());
    let mut lambda_prev = f64::NAN;
    for it in 1..=max_iter {
        w.gemv(1.0, k, &v, 0.0);
        if let Some((u, l1)) = deflate {
            let c = l1 * u.dot(&v);
            w.axpy(-c, u, 1.0);
        }
        let lambda = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return Some((v, 0.0, it));
        }
        v.copy_from(&w);
        v /= wn;
        if (lambda - lambda_prev).abs() <= EIGEN_TOL * lambda.abs() {
            return Some((v, lambda, it));
        }
        lambda_prev = lambda;
    }
    None
}

/// Eigenvector of the largest eigenvalue, normalized to Σu²dt = 1 with a
/// positive peak.
pub fn dominant_mode(k: &AutocorrMatrix) -> Result<DominantMode> {
    let m = k.entries.nrows();
    if m == 0 || k.entries.ncols() != m {
        return Err(Error::Degenerate("autocorrelation matrix is empty or not square".into()));
    }
    if k.entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("autocorrelation matrix has non-finite entries".into()));
    }
    let start = DVector::from_iterator(m, (0..m).map(|i| k.entries[(i, i)].max(0.0).sqrt()));
    let start = if start.norm() > 0.0 {
        start
    } else {
        DVector::from_element(m, 1.0)
    };
    let (v, lambda, iterations) =
        power_iteration(&k.entries, start, None, MAX_POWER_ITERATIONS).ok_or(Error::NoConvergence {
            iterations: MAX_POWER_ITERATIONS,
        })?;

    // Second eigenvalue: deflated iteration from a start vector orthogonal to v.
    let mut probe = DVector::from_iterator(m, (0..m).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }));
    let c = probe.dot(&v);
    probe.axpy(-c, &v, 1.0);
    let second = if m > 1 {
        power_iteration(&k.entries, probe.clone(), Some((&v, lambda)), 2_000)
            .map(|(_, l, _)| l)
            .unwrap_or_else(|| {
                let mut w = DVector::zeros(m);
                w.gemv(1.0, &k.entries, &probe, 0.0);
                probe.dot(&w) / probe.norm_squared().max(f64::MIN_POSITIVE)
            })
    } else {
        0.0
    };
    let degenerate = lambda.abs() == 0.0 || (lambda - second.abs()) < DEGENERACY_GAP * lambda.abs();
    if degenerate {
        log::warn!("top autocorrelation eigenvalue {lambda:e} is not separated from {second:e}");
    }
    let mode = TemporalMode::new(v.iter().copied().collect(), k.dt, k.t_start)?.normalized()?;
    Ok(DominantMode {
        mode,
        eigenvalue: lambda,
        second_eigenvalue: second,
        iterations,
        degenerate,
    })
}

/// 1 − |⟨u, u_ref⟩|, interpolating `u` onto the reference grid when the
/// sampling differs.
pub fn mode_mismatch(u: &TemporalMode, u_ref: &TemporalMode) -> Result<f64> {
    let overlap = mode_overlap(u, u_ref)?;
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

/// |⟨u, u_ref⟩| on the reference grid.
pub fn mode_overlap(u: &TemporalMode, u_ref: &TemporalMode) -> Result<f64> {
    let u_ref = u_ref.clone().normalized()?;
    let u = if u.grid().compatible(&u_ref.grid()) {
        u.clone().normalized()?
    } else {
        u.resampled_onto(u_ref.grid())?
    };
    Ok(u.inner(&u_ref)?.abs())
}

/// L2 distance between `u` and the reference resampled onto u's grid, after
/// aligning signs; measures how noisy a reconstruction is against a smooth
/// prediction.
pub fn residual_rms(u: &TemporalMode, smooth: &TemporalMode) -> Result<f64> {
    let reference = if smooth.grid().compatible(&u.grid()) {
        smooth.clone().normalized()?
    } else {
        smooth.resampled_onto(u.grid())?
    };
    let sign = if u.inner(&reference)? < 0.0 { -1.0 } else { 1.0 };
    let d: f64 = u
        .samples()
        .iter()
        .zip(reference.samples())
        .map(|(a, b)| (a - sign * b).powi(2))
        .sum();
    Ok((d * u.dt()).sqrt())
}
