//! The heralded photon-subtracted squeezed-vacuum state and its quadrature
//! statistics.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{CMatrix, DensityMatrix};
use crate::error::{Error, Result};
use crate::fock::{binomial, fock_wavefunctions_into};

/// Population threshold for the highest retained Fock level.
pub const FOCK_TAIL_LIMIT: f64 = 1e-3;

/// Number of points of the inverse-CDF grid used to draw quadratures.
pub const SAMPLER_GRID_POINTS: usize = 4096;

/// Half-width of the sampling grid in units of the widest quadrature spread.
pub const SAMPLER_SPAN_SIGMAS: f64 = 6.0;

/// Parameters of the heralded kitten state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeraldedStateModel {
    /// Squeezing parameter r.
    pub r: f64,
    /// Weight of the photon-subtracted component.
    pub xi: f64,
    /// Preparation efficiency applied as a loss channel.
    pub eta_prep: f64,
    /// Fock cutoff D.
    pub fock_dim: usize,
}

impl HeraldedStateModel {
    pub fn validate(&self) -> Result<()> {
        if !self.r.is_finite() || self.r < 0.0 {
            return Err(Error::param("r", format!("squeezing must be finite and >= 0, got {}", self.r)));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::param("xi", format!("modal purity must lie in [0,1], got {}", self.xi)));
        }
        if !(self.eta_prep > 0.0 && self.eta_prep <= 1.0) {
            return Err(Error::param(
                "eta_prep",
                format!("efficiency must lie in (0,1], got {}", self.eta_prep),
            ));
        }
        if self.fock_dim < 4 {
            return Err(Error::param("fock_dim", format!("cutoff must be >= 4, got {}", self.fock_dim)));
        }
        Ok(())
    }

    /// Quadrature variance of the pure squeezed vacuum at LO phase `theta`:
    /// (e^{−2r}cos²θ + e^{2r}sin²θ)/2.
    pub fn squeezed_variance(&self, theta: f64) -> f64 {
        squeezed_variance(self.r, theta)
    }
}

pub fn squeezed_variance(r: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    0.5 * ((-2.0 * r).exp() * c * c + (2.0 * r).exp() * s * s)
}

/// Truncated squeeze operator exp((r/2)(a² − a†²)) at dimension `dim`.
pub fn squeeze_operator(r: f64, dim: usize) -> DMatrix<f64> {
    if r == 0.0 {
        return DMatrix::identity(dim, dim);
    }
    let mut gen = DMatrix::zeros(dim, dim);
    for n in 2..dim {
        let amp = 0.5 * r * ((n * (n - 1)) as f64).sqrt();
        // a² lowers by two, a†² raises by two.
        gen[(n - 2, n)] += amp;
        gen[(n, n - 2)] -= amp;
    }
    gen.exp()
}

/// Fock-basis pure-loss channel with transmission `eta`.
pub fn apply_loss(rho: &CMatrix, eta: f64) -> CMatrix {
    let dim = rho.nrows();
    if eta == 1.0 {
        return rho.clone();
    }
    let mut out = CMatrix::zeros(dim, dim);
    for m in 0..dim {
        for n in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..dim - m.max(n) {
                let w = (binomial(m + k, k) * binomial(n + k, k)).sqrt()
                    * eta.powf(0.5 * (m + n) as f64)
                    * (1.0 - eta).powi(k as i32);
                acc += rho[(m + k, n + k)] * w;
            }
            out[(m, n)] = acc;
        }
    }
    out
}

/// ρ = L_η[S(r)(ξ|1⟩⟨1| + (1−ξ)|0⟩⟨0|)S†(r)] truncated to the model cutoff.
pub fn heralded_density(model: &HeraldedStateModel) -> Result<DensityMatrix> {
    model.validate()?;
    let dim = model.fock_dim;
    let work = 4 * dim;
    let s = squeeze_operator(model.r, work);
    let mut sigma = CMatrix::zeros(work, work);
    for (weight, col) in [(model.xi, 1usize), (1.0 - model.xi, 0usize)] {
        if weight == 0.0 {
            continue;
        }
        for i in 0..work {
            for j in 0..work {
                sigma[(i, j)] += Complex64::new(weight * s[(i, col)] * s[(j, col)], 0.0);
            }
        }
    }
    let lossy = apply_loss(&sigma, model.eta_prep);
    let truncated = lossy.view((0, 0), (dim, dim)).into_owned();
    let tail = truncated[(dim - 1, dim - 1)].re;
    if tail >= FOCK_TAIL_LIMIT {
        return Err(Error::FockTail {
            index: dim - 1,
            population: tail,
        });
    }
    DensityMatrix::from_hermitian_lossy(truncated)
}

/// p(x|θ) = Σ_{mn} ρ_mn e^{i(n−m)θ} ψ_m(x) ψ_n(x).
pub fn marginal_pdf(rho: &DensityMatrix, theta: f64, x_grid: &[f64]) -> Vec<f64> {
    let dim = rho.dim();
    let m = rho.entries();
    let phases: Vec<Complex64> = (0..dim)
        .map(|d| Complex64::from_polar(1.0, d as f64 * theta))
        .collect();
    let mut psi = vec![0.0; dim];
    x_grid
        .iter()
        .map(|&x| {
            fock_wavefunctions_into(x, &mut psi);
            let mut p = 0.0;
            for a in 0..dim {
                p += m[(a, a)].re * psi[a] * psi[a];
                for b in a + 1..dim {
                    p += 2.0 * (m[(a, b)] * phases[b - a]).re * psi[a] * psi[b];
                }
            }
            p
        })
        .collect()
}

/// ⟨X_θ²⟩ maximized over θ, an upper bound for every marginal's second moment.
pub fn max_quadrature_second_moment(rho: &DensityMatrix) -> f64 {
    let m = rho.entries();
    let dim = rho.dim();
    let nbar = rho.mean_photon_number();
    let mut a2 = Complex64::new(0.0, 0.0);
    for k in 2..dim {
        a2 += m[(k, k - 2)] * ((k * (k - 1)) as f64).sqrt();
    }
    nbar + 0.5 + a2.norm()
}

/// Inverse-CDF quadrature sampler for one density matrix, reusable across
/// LO phases. The θ dependence is carried by harmonic coefficients
/// c_d(x) = Σ_m ρ_{m,m+d} ψ_m ψ_{m+d}, so p(x|θ) = Re c₀ + 2 Re Σ_{d≥1} c_d e^{idθ}.
#[derive(Debug, Clone)]
pub struct MarginalSampler {
    x: Vec<f64>,
    dx: f64,
    harmonics: Vec<Vec<Complex64>>,
}

impl MarginalSampler {
    pub fn new(rho: &DensityMatrix) -> Self {
        Self::with_grid(rho, SAMPLER_GRID_POINTS)
    }

    pub fn with_grid(rho: &DensityMatrix, points: usize) -> Self {
        let points = points.max(16);
        let half = SAMPLER_SPAN_SIGMAS * max_quadrature_second_moment(rho).sqrt();
        let dx = 2.0 * half / (points - 1) as f64;
        let x: Vec<f64> = (0..points).map(|i| -half + i as f64 * dx).collect();
        let dim = rho.dim();
        let m = rho.entries();
        let mut harmonics = vec![vec![Complex64::new(0.0, 0.0); points]; dim];
        let mut psi = vec![0.0; dim];
        for (i, &xi) in x.iter().enumerate() {
            fock_wavefunctions_into(xi, &mut psi);
            for (d, row) in harmonics.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..dim - d {
                    acc += m[(a, a + d)] * (psi[a] * psi[a + d]);
                }
                row[i] = acc;
            }
        }
        Self { x, dx, harmonics }
    }

    pub fn grid(&self) -> &[f64] {
        &self.x
    }

    pub fn pdf(&self, theta: f64) -> Vec<f64> {
        let phases: Vec<Complex64> = (0..self.harmonics.len())
            .map(|d| Complex64::from_polar(1.0, d as f64 * theta))
            .collect();
        (0..self.x.len())
            .map(|i| {
                let mut p = self.harmonics[0][i].re;
                for d in 1..self.harmonics.len() {
                    p += 2.0 * (self.harmonics[d][i] * phases[d]).re;
                }
                p
            })
            .collect()
    }

    /// Trapezoidal CDF on the grid, negative densities clipped to zero.
    pub fn cdf(&self, theta: f64) -> Vec<f64> {
        let pdf = self.pdf(theta);
        let mut cdf = Vec::with_capacity(pdf.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in pdf.windows(2) {
            acc += 0.5 * (w[0].max(0.0) + w[1].max(0.0)) * self.dx;
            cdf.push(acc);
        }
        cdf
    }

    /// Maps a uniform variate in [0,1) through the piecewise-linear inverse CDF.
    pub fn quantile(&self, theta: f64, u: f64) -> f64 {
        let cdf = self.cdf(theta);
        invert_cdf(&self.x, &cdf, u)
    }

    /// Inverse-CDF table for one LO phase, for drawing many values at it.
    pub fn at(&self, theta: f64) -> PhaseCdf {
        PhaseCdf {
            x: self.x.clone(),
            cdf: self.cdf(theta),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(theta, u)
    }
}

/// Tabulated marginal CDF at a fixed LO phase.
#[derive(Debug, Clone)]
pub struct PhaseCdf {
    x: Vec<f64>,
    cdf: Vec<f64>,
}

impl PhaseCdf {
    pub fn quantile(&self, u: f64) -> f64 {
        invert_cdf(&self.x, &self.cdf, u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random())
    }
}

fn invert_cdf(x: &[f64], cdf: &[f64], u: f64) -> f64 {
    let total = *cdf.last().unwrap();
    let target = u.clamp(0.0, 1.0) * total;
    // First index whose cumulative value exceeds the target.
    let hi = cdf.partition_point(|&c| c <= target).clamp(1, cdf.len() - 1);
    let lo = hi - 1;
    let step = cdf[hi] - cdf[lo];
    let frac = if step > 0.0 {
        (target - cdf[lo]) / step
    } else {
        0.0
    };
    x[lo] + frac * (x[hi] - x[lo])
}

/// Draws one quadrature value at phase `theta`.
pub fn sample_quadrature<R: Rng + ?Sized>(rho: &DensityMatrix, theta: f64, rng: &mut R) -> f64 {
    MarginalSampler::new(rho).sample(theta, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn model(r: f64, xi: f64, eta: f64) -> HeraldedStateModel {
        HeraldedStateModel {
            r,
            xi,
            eta_prep: eta,
            fock_dim: 12,
        }
    }

    #[test]
    fn identity_cases_are_exact() {
        let vac = heralded_density(&model(0.0, 0.0, 0.7)).unwrap();
        assert_eq!(vac.population(0), 1.0);
        assert_eq!(vac.purity(), 1.0);
        let one = heralded_density(&model(0.0, 1.0, 1.0)).unwrap();
        assert_eq!(one.population(1), 1.0);
        assert_eq!(one.purity(), 1.0);
    }

    #[test]
    fn loss_on_single_photon() {
        let one = heralded_density(&model(0.0, 1.0, 0.6)).unwrap();
        assert!((one.population(1) - 0.6).abs() < 1e-12);
        assert!((one.population(0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn heralded_state_is_physical() {
        let rho = heralded_density(&model(0.43, 0.8, 0.85)).unwrap();
        assert!(rho.min_eigenvalue() > -1e-10);
        assert!((rho.trace() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn excessive_squeezing_trips_tail_check() {
        let err = heralded_density(&HeraldedStateModel {
            r: 1.5,
            xi: 1.0,
            eta_prep: 1.0,
            fock_dim: 6,
        })
        .unwrap_err();
        assert!(matches!(err, Error::FockTail { .. }));
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(model(0.1, 1.2, 1.0).validate().is_err());
        assert!(model(0.1, 0.5, 0.0).validate().is_err());
        assert!(model(-0.1, 0.5, 0.5).validate().is_err());
        let mut m = model(0.1, 0.5, 0.5);
        m.fock_dim = 3;
        assert!(m.validate().is_err());
    }

    #[test]
    fn vacuum_and_single_photon_marginals() {
        let vac = DensityMatrix::vacuum(6).unwrap();
        let one = DensityMatrix::fock(1, 6).unwrap();
        for theta in [0.0, 0.7, 2.0] {
            let p = marginal_pdf(&vac, theta, &[0.0])[0];
            assert!((p - 1.0 / PI.sqrt()).abs() < 1e-14);
            assert!(marginal_pdf(&one, theta, &[0.0])[0].abs() < 1e-14);
        }
    }

    #[test]
    fn sampler_matches_direct_marginal() {
        let rho = heralded_density(&model(0.4, 0.9, 0.7)).unwrap();
        let sampler = MarginalSampler::new(&rho);
        for theta in [0.0, 0.4, 1.9] {
            let direct = marginal_pdf(&rho, theta, sampler.grid());
            for (a, b) in direct.iter().zip(sampler.pdf(theta)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quantile_endpoints_stay_on_grid() {
        let rho = DensityMatrix::vacuum(4).unwrap();
        let s = MarginalSampler::new(&rho);
        let lo = s.quantile(0.0, 0.0);
        let hi = s.quantile(0.0, 1.0);
        assert!(lo >= s.grid()[0] && hi <= *s.grid().last().unwrap());
        assert!(s.quantile(0.0, 0.5).abs() < 1e-9);
    }
}
