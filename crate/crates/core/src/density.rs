//! Truncated Fock-basis density matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// Hermitian, unit-trace, positive semidefinite D×D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: CMatrix,
}

impl DensityMatrix {
    /// Validates the density-matrix invariants.
    pub fn new(entries: CMatrix) -> Result<Self> {
        let rho = Self { entries };
        rho.check()?;
        Ok(rho)
    }

    pub fn from_real(entries: &DMatrix<f64>) -> Result<Self> {
        Self::new(entries.map(|v| Complex64::new(v, 0.0)))
    }

    /// Symmetrizes and renormalizes a numerically-Hermitian matrix, then
    /// validates it. Used on iterates whose Hermiticity has drifted by
    /// rounding.
    pub fn from_hermitian_lossy(entries: CMatrix) -> Result<Self> {
        let sym = (&entries + entries.adjoint()) * Complex64::new(0.5, 0.0);
        let trace = sym.trace().re;
        if !(trace > 0.0) || !trace.is_finite() {
            return Err(Error::InvalidDensity(format!("trace {trace} is not positive")));
        }
        Self::new(sym / Complex64::new(trace, 0.0))
    }

    /// |n⟩⟨n| in a `dim`-dimensional space.
    pub fn fock(n: usize, dim: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::param("n", format!("Fock level {n} outside cutoff {dim}")));
        }
        let mut m = CMatrix::zeros(dim, dim);
        m[(n, n)] = Complex64::new(1.0, 0.0);
        Ok(Self { entries: m })
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        Self::fock(0, dim)
    }

    /// I/D.
    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "cutoff must be at least 1"));
        }
        Ok(Self {
            entries: CMatrix::identity(dim, dim) / Complex64::new(dim as f64, 0.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn population(&self, n: usize) -> f64 {
        self.entries[(n, n)].re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.population(n)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    /// Mean photon number Σ n ρ_nn.
    pub fn mean_photon_number(&self) -> f64 {
        (0..self.dim()).map(|n| n as f64 * self.population(n)).sum()
    }

    /// Tr ρ².
    pub fn purity(&self) -> f64 {
        self.entries.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.entries)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn check(&self) -> Result<()> {
        let m = &self.entries;
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidDensity(format!(
                "shape {}x{} is not square and non-empty",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidDensity("non-finite entry".into()));
        }
        let herm = hermiticity_defect(m);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidDensity(format!(
                "Hermiticity defect {herm:e} exceeds {HERMITIAN_TOL:e}"
            )));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr} is not 1")));
        }
        let min = self.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::InvalidDensity(format!(
                "minimum eigenvalue {min:e} is negative"
            )));
        }
        Ok(())
    }
}

pub(crate) fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}
