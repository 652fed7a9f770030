//! Maximum-likelihood state reconstruction from phase-tagged quadratures,
//! Wigner functions and state-comparison metrics.

use std::f64::consts::{FRAC_1_PI, SQRT_2};

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{CMatrix, DensityMatrix};
use crate::error::{Error, Result};
use crate::fock::{binomial, fock_wavefunctions_into, laguerre_into, ln_factorial};
use crate::quadrature::QuadratureSample;

/// Probabilities at or below this value abort the reconstruction.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// Relative log-likelihood change that marks convergence.
pub const CONVERGENCE_TOL: f64 = 1e-10;

/// Samples per partial sum; partial sums are merged in index order so the
/// result does not depend on the thread count.
const CHUNK: usize = 1024;

/// Rounding-level likelihood decreases accepted without a diluted step.
const ROUNDING_SLACK: f64 = 1e-13;

const MAX_DILUTIONS: usize = 40;

/// Coefficients √(C(n,k) η^{n−k} (1−η)^k) of the binomial loss channel.
fn loss_coefficients(dim: usize, eta: f64) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|n| {
            (0..=n)
                .map(|k| {
                    (binomial(n, k) * eta.powi((n - k) as i32) * (1.0 - eta).powi(k as i32)).sqrt()
                })
                .collect()
        })
        .collect()
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(Error::param("eta", format!("efficiency must lie in (0,1], got {eta}")))
    }
}

/// Real symmetric part A_nm(x) of the loss POVM; the full element is
/// Π_nm = e^{i(n−m)θ} A_nm.
fn loss_povm_amplitudes(x: f64, coeffs: &[Vec<f64>], psi: &mut [f64], out: &mut [f64]) {
    let dim = coeffs.len();
    fock_wavefunctions_into(x, psi);
    for n in 0..dim {
        for m in 0..=n {
            let mut acc = 0.0;
            for k in 0..=m {
                acc += coeffs[n][k] * coeffs[m][k] * psi[n - k] * psi[m - k];
            }
            out[n * dim + m] = acc;
            out[m * dim + n] = acc;
        }
    }
}

/// Π^η(x,θ) = Σ_k A_k† |x,θ⟩⟨x,θ| A_k with ⟨n|x,θ⟩ = e^{inθ} ψ_n(x).
pub fn loss_povm(x: f64, theta: f64, dim: usize, eta: f64) -> Result<CMatrix> {
    check_eta(eta)?;
    let coeffs = loss_coefficients(dim, eta);
    let mut psi = vec![0.0; dim];
    let mut amp = vec![0.0; dim * dim];
    loss_povm_amplitudes(x, &coeffs, &mut psi, &mut amp);
    Ok(CMatrix::from_fn(dim, dim, |n, m| {
        Complex64::from_polar(amp[n * dim + m], (n as f64 - m as f64) * theta)
    }))
}

/// Length of the real packing of a D×D Hermitian matrix.
pub fn packed_len(dim: usize) -> usize {
    dim * dim
}

/// Packs a Hermitian matrix into D² reals (diagonal, then √2·Re and √2·Im of
/// the upper triangle) so that Tr(AB) becomes a dot product.
pub fn pack_hermitian(m: &CMatrix) -> Vec<f64> {
    let dim = m.nrows();
    let mut out = Vec::with_capacity(packed_len(dim));
    out.extend((0..dim).map(|n| m[(n, n)].re));
    for a in 0..dim {
        for b in a + 1..dim {
            out.push(SQRT_2 * m[(a, b)].re);
            out.push(SQRT_2 * m[(a, b)].im);
        }
    }
    out
}

pub fn unpack_hermitian(v: &[f64], dim: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    for n in 0..dim {
        m[(n, n)] = Complex64::new(v[n], 0.0);
    }
    let mut idx = dim;
    for a in 0..dim {
        for b in a + 1..dim {
            let c = Complex64::new(v[idx], v[idx + 1]) / SQRT_2;
            m[(a, b)] = c;
            m[(b, a)] = c.conj();
            idx += 2;
        }
    }
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Packed loss POVMs of a sample set, one row per sample.
#[derive(Debug, Clone)]
pub struct MaxLikProblem {
    dim: usize,
    eta: f64,
    rows: Vec<f64>,
    samples: Vec<QuadratureSample>,
}

impl MaxLikProblem {
    pub fn new(samples: &[QuadratureSample], dim: usize, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        if samples.is_empty() {
            return Err(Error::param("samples", "tomography needs at least one sample"));
        }
        if dim < 2 {
            return Err(Error::param("dim", "Fock cutoff must be at least 2"));
        }
        if let Some(s) = samples.iter().find(|s| !s.x.is_finite() || !s.theta.is_finite()) {
            return Err(Error::param(
                "samples",
                format!("sample from trace {} is not finite", s.trace_id),
            ));
        }
        let coeffs = loss_coefficients(dim, eta);
        let width = packed_len(dim);
        let mut rows = vec![0.0; samples.len() * width];
        rows.par_chunks_mut(width)
            .zip(samples.par_iter())
            .for_each_init(
                || (vec![0.0; dim], vec![0.0; dim * dim]),
                |(psi, amp), (row, s)| {
                    loss_povm_amplitudes(s.x, &coeffs, psi, amp);
                    for n in 0..dim {
                        row[n] = amp[n * dim + n];
                    }
                    let mut idx = dim;
                    for a in 0..dim {
                        for b in a + 1..dim {
                            // Π_ab = e^{i(a−b)θ} A_ab
                            let (sin, cos) = ((a as f64 - b as f64) * s.theta).sin_cos();
                            let amp_ab = amp[a * dim + b];
                            row[idx] = SQRT_2 * amp_ab * cos;
                            row[idx + 1] = SQRT_2 * amp_ab * sin;
                            idx += 2;
                        }
                    }
                },
            );
        Ok(Self {
            dim,
            eta,
            rows,
            samples: samples.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn row(&self, j: usize) -> &[f64] {
        let w = packed_len(self.dim);
        &self.rows[j * w..(j + 1) * w]
    }

    /// p_j = Tr[Π_j ρ] for every sample.
    pub fn probabilities(&self, rho: &CMatrix) -> Result<Vec<f64>> {
        let packed = pack_hermitian(rho);
        let w = packed_len(self.dim);
        let probs: Vec<f64> = self.rows.par_chunks(w).map(|row| dot(row, &packed)).collect();
        if let Some((j, &p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(**p > UNDERFLOW_FLOOR))
        {
            let s = &self.samples[j];
            return Err(Error::ProbabilityUnderflow {
                index: j,
                x: s.x,
                theta: s.theta,
                probability: p,
            });
        }
        Ok(probs)
    }

    /// Mean log-likelihood (1/N) Σ_j ln p_j.
    pub fn log_likelihood(&self, probs: &[f64]) -> f64 {
        let partial: Vec<f64> = probs
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(|p| p.ln()).sum::<f64>())
            .collect();
        partial.iter().sum::<f64>() / probs.len() as f64
    }

    /// R = (1/N) Σ_j Π_j / p_j.
    pub fn r_operator(&self, probs: &[f64]) -> CMatrix {
        let w = packed_len(self.dim);
        let partial: Vec<Vec<f64>> = (0..probs.len())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|idx| {
                let mut acc = vec![0.0; w];
                for &j in idx {
                    let inv = 1.0 / probs[j];
                    for (a, r) in acc.iter_mut().zip(self.row(j)) {
                        *a += r * inv;
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; w];
        for p in &partial {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        let n = probs.len() as f64;
        total.iter_mut().for_each(|v| *v /= n);
        unpack_hermitian(&total, self.dim)
    }
}

fn sandwich(a: &CMatrix, rho: &CMatrix) -> CMatrix {
    let m = a * rho * a;
    let tr = m.trace().re;
    let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    m / Complex64::new(tr, 0.0)
}

/// Outcome of one likelihood-ascent step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub rho: DensityMatrix,
    pub log_likelihood: f64,
    pub probabilities: Vec<f64>,
    /// Number of step halvings needed to keep the likelihood non-decreasing.
    pub dilutions: usize,
}

/// One RρR step. Falls back to diluted steps (I+εR)ρ(I+εR) when the plain
/// step would lower the likelihood.
pub fn maxlik_step(
    problem: &MaxLikProblem,
    rho: &DensityMatrix,
    probs: &[f64],
    ll: f64,
) -> Result<StepOutcome> {
    let r = problem.r_operator(probs);
    let candidate = sandwich(&r, rho.entries());
    let cand_probs = problem.probabilities(&candidate)?;
    let cand_ll = problem.log_likelihood(&cand_probs);
    if cand_ll >= ll - ROUNDING_SLACK * ll.abs().max(1.0) {
        return Ok(StepOutcome {
            rho: DensityMatrix::from_hermitian_lossy(candidate)?,
            log_likelihood: cand_ll,
            probabilities: cand_probs,
            dilutions: 0,
        });
    }
    let id = CMatrix::identity(problem.dim, problem.dim);
    let mut eps = 1.0;
    for dilutions in 1..=MAX_DILUTIONS {
        eps *= 0.5;
        let a = &id + &r * Complex64::new(eps, 0.0);
        let candidate = sandwich(&a, rho.entries());
        let cand_probs = problem.probabilities(&candidate)?;
        let cand_ll = problem.log_likelihood(&cand_probs);
        if cand_ll >= ll {
            return Ok(StepOutcome {
                rho: DensityMatrix::from_hermitian_lossy(candidate)?,
                log_likelihood: cand_ll,
                probabilities: cand_probs,
                dilutions,
            });
        }
    }
    Ok(StepOutcome {
        rho: rho.clone(),
        log_likelihood: ll,
        probabilities: probs.to_vec(),
        dilutions: MAX_DILUTIONS,
    })
}

/// Single ascent step from `rho`.
pub fn maxlik_iterate(
    rho: &DensityMatrix,
    samples: &[QuadratureSample],
    eta: f64,
) -> Result<DensityMatrix> {
    let problem = MaxLikProblem::new(samples, rho.dim(), eta)?;
    let probs = problem.probabilities(rho.entries())?;
    let ll = problem.log_likelihood(&probs);
    Ok(maxlik_step(&problem, rho, &probs, ll)?.rho)
}

#[derive(Debug, Clone)]
pub struct MaxLikResult {
    pub rho: DensityMatrix,
    /// Mean log-likelihood before the first step and after every step.
    pub log_likelihood: Vec<f64>,
    /// First iteration whose relative likelihood change fell below the tolerance.
    pub converged_at: Option<usize>,
    pub dilutions: usize,
}

/// Iterates from `start` for `iters` steps.
pub fn run_maxlik_from(
    problem: &MaxLikProblem,
    start: DensityMatrix,
    iters: usize,
) -> Result<MaxLikResult> {
    if iters == 0 {
        return Err(Error::param("iters", "need at least one iteration"));
    }
    if start.dim() != problem.dim() {
        return Err(Error::param("start", "dimension differs from the problem cutoff"));
    }
    let mut rho = start;
    let mut probs = problem.probabilities(rho.entries())?;
    let mut ll = problem.log_likelihood(&probs);
    let mut trajectory = Vec::with_capacity(iters + 1);
    trajectory.push(ll);
    let mut converged_at = None;
    let mut dilutions = 0;
    for it in 1..=iters {
        let step = maxlik_step(problem, &rho, &probs, ll)?;
        dilutions += step.dilutions;
        if converged_at.is_none()
            && (step.log_likelihood - ll).abs() < CONVERGENCE_TOL * ll.abs().max(f64::MIN_POSITIVE)
        {
            converged_at = Some(it);
        }
        rho = step.rho;
        probs = step.probabilities;
        ll = step.log_likelihood;
        trajectory.push(ll);
    }
    Ok(MaxLikResult {
        rho,
        log_likelihood: trajectory,
        converged_at,
        dilutions,
    })
}

/// MaxLik reconstruction starting from the maximally mixed state.
pub fn run_maxlik(
    samples: &[QuadratureSample],
    dim: usize,
    iters: usize,
    eta: f64,
) -> Result<MaxLikResult> {
    let problem = MaxLikProblem::new(samples, dim, eta)?;
    run_maxlik_from(&problem, DensityMatrix::maximally_mixed(dim)?, iters)
}

/// Wigner function sampled on a rectangular grid; `values[i * p.len() + j]`
/// is W(x_i, p_j).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub values: Vec<f64>,
}

impl WignerGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p.len() + j]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        let weights = |axis: &[f64]| -> Vec<f64> {
            let n = axis.len();
            (0..n)
                .map(|i| {
                    let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { axis[i + 1] - axis[i] } else { 0.0 };
                    0.5 * (left + right)
                })
                .collect()
        };
        let wx = weights(&self.x);
        let wp = weights(&self.p);
        let mut acc = 0.0;
        for (i, a) in wx.iter().enumerate() {
            for (j, b) in wp.iter().enumerate() {
                acc += a * b * self.at(i, j);
            }
        }
        acc
    }
}

/// Evenly spaced axis of `n` points over [−half, half].
pub fn symmetric_axis(half: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64)
        .collect()
}

/// W(x,p) for a density matrix at one phase-space point.
fn wigner_point(rho: &CMatrix, x: f64, p: f64, lag: &mut [f64]) -> f64 {
    let dim = rho.nrows();
    let r2 = x * x + p * p;
    let gauss = FRAC_1_PI * (-r2).exp();
    let z = 2.0 * r2;
    let beta = Complex64::new(SQRT_2 * x, -SQRT_2 * p);
    let mut total = 0.0;
    let mut beta_pow = Complex64::new(1.0, 0.0);
    for d in 0..dim {
        let len = dim - d;
        laguerre_into(d, z, &mut lag[..len]);
        for n in 0..len {
            let m = n + d;
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let norm = (0.5 * (ln_factorial(n) - ln_factorial(m))).exp();
            let kernel = beta_pow * (sign * norm * lag[n] * gauss);
            let contrib = (rho[(m, n)] * kernel).re;
            total += if d == 0 { contrib } else { 2.0 * contrib };
        }
        beta_pow *= beta;
    }
    total
}

/// W(x,p) = Σ_{mn} ρ_mn W_{|m⟩⟨n|}(x,p), normalized to unit integral with
/// vacuum W(0,0) = 1/π.
pub fn wigner(rho: &DensityMatrix, x_axis: &[f64], p_axis: &[f64]) -> WignerGrid {
    let dim = rho.dim();
    let values: Vec<f64> = x_axis
        .par_iter()
        .flat_map_iter(|&x| {
            let mut lag = vec![0.0; dim];
            p_axis
                .iter()
                .map(|&p| wigner_point(rho.entries(), x, p, &mut lag))
                .collect::<Vec<_>>()
        })
        .collect();
    WignerGrid {
        x: x_axis.to_vec(),
        p: p_axis.to_vec(),
        values,
    }
}

/// W(0,0) = (1/π) Σ_n (−1)ⁿ ρ_nn.
pub fn wigner_origin(rho: &DensityMatrix) -> f64 {
    FRAC_1_PI
        * rho
            .populations()
            .iter()
            .enumerate()
            .map(|(n, p)| if n % 2 == 0 { *p } else { -*p })
            .sum::<f64>()
}

fn hermitian_sqrt(m: &CMatrix) -> CMatrix {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
    let q = &eig.eigenvectors;
    q * CMatrix::from_diagonal(&roots) * q.adjoint()
}

/// Uhlmann fidelity (Tr√(√ρ₁ ρ₂ √ρ₁))².
pub fn fidelity(rho1: &DensityMatrix, rho2: &DensityMatrix) -> Result<f64> {
    if rho1.dim() != rho2.dim() {
        return Err(Error::param(
            "rho",
            format!("cutoffs differ: {} vs {}", rho1.dim(), rho2.dim()),
        ));
    }
    rho1.check()?;
    rho2.check()?;
    let s = hermitian_sqrt(rho1.entries());
    let inner = &s * rho2.entries() * &s;
    let inner = (&inner + inner.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(inner);
    let tr: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok((tr * tr).clamp(0.0, 1.0))
}

/// Tr(ρ₁ρ₂)/√(Tr ρ₁² Tr ρ₂²), the normalized overlap of the two Wigner functions.
pub fn wigner_overlap(rho1: &DensityMatrix, rho2: &DensityMatrix) -> Result<f64> {
    if rho1.dim() != rho2.dim() {
        return Err(Error::param("rho", "cutoffs differ"));
    }
    let cross = (rho1.entries() * rho2.entries()).trace().re;
    Ok(cross / (rho1.purity() * rho2.purity()).sqrt())
}

/// How measured efficiency is taken into account during reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EfficiencyMode {
    /// Loss-aware projectors with the detection efficiency.
    #[default]
    Povm,
    /// Quadratures divided by √η and reconstructed with ideal projectors.
    /// This inflates the added vacuum noise and is reported as such.
    Rescale,
}

impl std::str::FromStr for EfficiencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "povm" => Ok(Self::Povm),
            "rescale" => Ok(Self::Rescale),
            other => Err(Error::param(
                "efficiency_mode",
                format!("expected povm or rescale, got {other}"),
            )),
        }
    }
}

impl std::fmt::Display for EfficiencyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Povm => "povm",
            Self::Rescale => "rescale",
        })
    }
}

/// Applies the efficiency handling to a sample set, returning the samples
/// and the efficiency to put into the projectors.
pub fn prepare_efficiency(
    samples: &[QuadratureSample],
    eta: f64,
    mode: EfficiencyMode,
) -> Result<(Vec<QuadratureSample>, f64)> {
    check_eta(eta)?;
    Ok(match mode {
        EfficiencyMode::Povm => (samples.to_vec(), eta),
        EfficiencyMode::Rescale => {
            let scale = 1.0 / eta.sqrt();
            (
                samples
                    .iter()
                    .map(|s| QuadratureSample { x: s.x * scale, ..*s })
                    .collect(),
                1.0,
            )
        }
    })
}
