//! Harmonic-oscillator eigenfunctions and Laguerre polynomials, in the
//! convention where the vacuum quadrature variance is 1/2.

use std::f64::consts::PI;

/// ψ_n(x) = H_n(x) e^{−x²/2} / √(2ⁿ n! √π).
pub fn fock_wavefunction(n: usize, x: f64) -> f64 {
    let mut out = vec![0.0; n + 1];
    fock_wavefunctions_into(x, &mut out);
    out[n]
}

/// Fills `out[n] = ψ_n(x)` for n in 0..out.len() with the normalized
/// upward recurrence ψ_{n+1} = √(2/(n+1)) x ψ_n − √(n/(n+1)) ψ_{n−1}.
pub fn fock_wavefunctions_into(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
    if out.len() > 1 {
        out[1] = 2f64.sqrt() * x * out[0];
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] =
            (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
    }
}

pub fn fock_wavefunctions(x: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    fock_wavefunctions_into(x, &mut out);
    out
}

/// Generalized Laguerre polynomials L_n^{(alpha)}(z) for n in 0..out.len().
pub fn laguerre_into(alpha: usize, z: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let a = alpha as f64;
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = 1.0 + a - z;
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = ((2.0 * nf + 1.0 + a - z) * out[n] - (nf + a) * out[n - 1]) / (nf + 1.0);
    }
}

/// ln(n!) by direct summation; exact enough for the small cutoffs used here.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_values() {
        assert!((fock_wavefunction(0, 0.0) - 0.751_125_544_464_942_5).abs() < 1e-15);
        assert_eq!(fock_wavefunction(1, 0.0), 0.0);
        // ψ_2(0) = −1/(√2 π^{1/4})
        let expected = -1.0 / (2f64.sqrt() * PI.powf(0.25));
        assert!((fock_wavefunction(2, 0.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn parity() {
        for n in 0..10 {
            let a = fock_wavefunction(n, 0.83);
            let b = fock_wavefunction(n, -0.83);
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!((a - sign * b).abs() < 1e-14);
        }
    }

    #[test]
    fn laguerre_small_orders() {
        let mut l = [0.0; 4];
        laguerre_into(0, 0.5, &mut l);
        // L_2(z) = (z² − 4z + 2)/2
        assert!((l[2] - (0.25 - 2.0 + 2.0) / 2.0).abs() < 1e-14);
        laguerre_into(2, 1.5, &mut l);
        // L_1^{(2)}(z) = 3 − z
        assert!((l[1] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn binomials() {
        assert!((binomial(5, 2) - 10.0).abs() < 1e-9);
        assert_eq!(binomial(2, 3), 0.0);
        assert!((binomial(11, 0) - 1.0).abs() < 1e-12);
    }
}
