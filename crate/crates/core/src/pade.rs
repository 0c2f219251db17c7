//! Padé spectral decomposition of the Bose function and the per-axis
//! prefactors of the hierarchy's lowering operators for a Drude bath.
//!
//! The `[N-1/N]` scheme represents
//!
//! ```text
//! coth(x) ≈ 1/x + Σ_j 2 η̄_j x / (x² + (ξ_j/2)²)
//! ```
//!
//! with `ξ_j` obtained from the eigenvalues of two symmetric tridiagonal
//! matrices. The bath decay frequencies are `ν_j = ξ_j / (βħ)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative gap below which `γ² - ν_j²` is treated as a pole collision.
const POLE_COLLISION: f64 = 1e-12;

const EIGEN_EPS: f64 = 1e-13;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PadeError {
    #[error("tridiagonal eigen-solver did not converge for K = {0}")]
    EigenSolver(usize),
    #[error("pole collision on axis {axis}: gamma = {gamma} coincides with nu_{j} = {nu}")]
    PoleCollision { axis: Axis, j: usize, gamma: f64, nu: f64 },
    #[error("invalid bath parameter: {0}")]
    InvalidBath(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
        })
    }
}

/// Drude bath parameters for both axes plus the shared inverse temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    pub eta_x: f64,
    pub eta_y: f64,
    pub gamma_x: f64,
    pub gamma_y: f64,
    pub k_x: usize,
    pub k_y: usize,
    pub beta: f64,
}

impl BathSpec {
    pub fn eta(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.eta_x,
            Axis::Y => self.eta_y,
        }
    }

    pub fn gamma(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.gamma_x,
            Axis::Y => self.gamma_y,
        }
    }

    pub fn poles(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.k_x,
            Axis::Y => self.k_y,
        }
    }

    pub fn validate(&self) -> Result<(), PadeError> {
        for axis in Axis::BOTH {
            let (eta, gamma) = (self.eta(axis), self.gamma(axis));
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(PadeError::InvalidBath(format!("eta_{axis} must be >= 0, got {eta}")));
            }
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(PadeError::InvalidBath(format!("gamma_{axis} must be > 0, got {gamma}")));
            }
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(PadeError::InvalidBath(format!("beta must be > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Dimensionless poles `ξ_j` (ascending) and coefficients `η̄_j`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PadePoles {
    pub xi: Vec<f64>,
    pub etabar: Vec<f64>,
}

impl PadePoles {
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Decay frequencies `ν_j = ξ_j / (βħ)`.
    pub fn frequencies(&self, beta: f64, hbar: f64) -> Vec<f64> {
        self.xi.iter().map(|x| x / (beta * hbar)).collect()
    }

    /// The rational stand-in for `coth(x)`.
    pub fn coth_surrogate(&self, x: f64) -> f64 {
        1.0 / x + self.xi.iter().zip(&self.etabar).map(|(xi, eb)| 2.0 * eb * x / (x * x + 0.25 * xi * xi)).sum::<f64>()
    }
}

/// `[K-1/K]` Padé spectral decomposition of the Bose function.
pub fn pade_frequencies(k: usize) -> Result<PadePoles, PadeError> {
    if k == 0 {
        return Ok(PadePoles::default());
    }
    let b = |m: usize| (2 * m + 1) as f64;

    // Λ is 2K×2K, Λ̃ is (2K-1)×(2K-1) with the indices shifted by one.
    let xi = positive_pole_positions(2 * k, 1, b).ok_or(PadeError::EigenSolver(k))?;
    let zeta = positive_pole_positions(2 * k - 1, 2, b).ok_or(PadeError::EigenSolver(k))?;
    debug_assert_eq!(xi.len(), k);
    debug_assert_eq!(zeta.len(), k - 1);

    let lead = 0.5 * k as f64 * b(k + 1);
    let etabar = (0..k)
        .map(|j| {
            let xj2 = xi[j] * xi[j];
            let num: f64 = zeta.iter().map(|z| z * z - xj2).product();
            let den: f64 = xi.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, x)| x * x - xj2).product();
            lead * num / den
        })
        .collect();
    Ok(PadePoles { xi, etabar })
}

/// Returns `2/λ` for the positive eigenvalues λ of the symmetric tridiagonal
/// matrix with off-diagonals `1/sqrt(b(m) b(m+1))`, `m = first..first+dim-1`,
/// sorted ascending. The factor 2 places the poles at `ξ_j → 2πj`.
fn positive_pole_positions(dim: usize, first: usize, b: impl Fn(usize) -> f64) -> Option<Vec<f64>> {
    if dim <= 1 {
        return Some(Vec::new());
    }
    let mut mat = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim - 1 {
        let m = first + i;
        let v = 1.0 / (b(m) * b(m + 1)).sqrt();
        mat[(i, i + 1)] = v;
        mat[(i + 1, i)] = v;
    }
    let eig = mat.try_symmetric_eigen(EIGEN_EPS, EIGEN_MAX_ITER)?;
    let scale = eig.eigenvalues.amax();
    let mut out: Vec<f64> = eig.eigenvalues.iter().filter(|&&l| l > EIGEN_EPS.sqrt() * scale).map(|l| 2.0 / l).collect();
    out.sort_by(|a, b| a.total_cmp(b));
    Some(out)
}

/// Per-axis decay frequencies and lowering-operator prefactors.
#[derive(Clone, Debug, PartialEq)]
pub struct PadeSet {
    pub axis: Axis,
    /// `ν_0 = γ`, then `ν_1..ν_K`.
    pub nu: Vec<f64>,
    pub etabar: Vec<f64>,
    /// Fluctuation prefactor of the zeroth lowering operator.
    pub a0: f64,
    /// Dissipation prefactor `η r0 γ² / 2`.
    pub b0: f64,
    /// Prefactors of the Padé-mode lowering operators, `j = 1..K`.
    pub aj: Vec<f64>,
    pub poles: PadePoles,
}

impl PadeSet {
    pub fn poles(&self) -> usize {
        self.aj.len()
    }
}

pub fn hierarchy_coefficients(bath: &BathSpec, axis: Axis, r0: f64, hbar: f64) -> Result<PadeSet, PadeError> {
    bath.validate()?;
    let (eta, gamma, beta) = (bath.eta(axis), bath.gamma(axis), bath.beta);
    let poles = pade_frequencies(bath.poles(axis))?;
    let freqs = poles.frequencies(beta, hbar);
    let g2 = gamma * gamma;

    let mut bracket = 1.0;
    let mut aj = Vec::with_capacity(freqs.len());
    for (j, (&nu, &eb)) in freqs.iter().zip(&poles.etabar).enumerate() {
        let gap = g2 - nu * nu;
        if gap.abs() < POLE_COLLISION * g2 {
            return Err(PadeError::PoleCollision { axis, j: j + 1, gamma, nu });
        }
        bracket += 2.0 * eb * g2 / gap;
        aj.push(-(eta * r0 * g2 / beta) * 2.0 * eb * nu / gap);
    }

    let mut nu = Vec::with_capacity(freqs.len() + 1);
    nu.push(gamma);
    nu.extend_from_slice(&freqs);
    Ok(PadeSet { axis, nu, etabar: poles.etabar.clone(), a0: eta * r0 * gamma / beta * bracket, b0: 0.5 * eta * r0 * g2, aj, poles })
}

/// Largest `|surrogate(x) - coth(x)|` over 1000 points of `(0, xmax]`.
pub fn coth_surrogate_error(set: &PadeSet, xmax: f64) -> f64 {
    surrogate_error(&set.poles, xmax)
}

pub fn surrogate_error(poles: &PadePoles, xmax: f64) -> f64 {
    (1..=1000)
        .map(|i| {
            let x = xmax * i as f64 / 1000.0;
            (poles.coth_surrogate(x) - 1.0 / x.tanh()).abs()
        })
        .fold(0.0, f64::max)
}

/// Symmetrized bath correlation `Re C(t)` reconstructed from the exponential
/// modes carried by a [`PadeSet`], scaled by `r0`.
pub fn symmetrized_correlation(set: &PadeSet, t: f64) -> f64 {
    let gamma = set.nu[0];
    set.a0 * (-gamma * t).exp() + set.aj.iter().zip(&set.nu[1..]).map(|(a, nu)| a * (-nu * t).exp()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bath(eta: f64, gamma: f64, k: usize, beta: f64) -> BathSpec {
        BathSpec { eta_x: eta, eta_y: eta, gamma_x: gamma, gamma_y: gamma, k_x: k, k_y: k, beta }
    }

    /// Matsubara form of the same exponential expansion: ν_j = 2πj/(βħ), η̄_j = 1.
    fn matsubara_a0(eta: f64, gamma: f64, beta: f64, terms: usize) -> f64 {
        let g2 = gamma * gamma;
        let sum: f64 = (1..=terms)
            .map(|j| {
                let nu = 2.0 * std::f64::consts::PI * j as f64 / beta;
                2.0 * g2 / (g2 - nu * nu)
            })
            .sum();
        eta * gamma / beta * (1.0 + sum)
    }

    #[test]
    fn zero_poles_is_empty() {
        let p = pade_frequencies(0).unwrap();
        assert!(p.xi.is_empty() && p.etabar.is_empty());
    }

    #[test]
    fn poles_are_ascending_and_approach_matsubara() {
        let p = pade_frequencies(6).unwrap();
        assert!(p.xi.windows(2).all(|w| w[0] < w[1]));
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((p.xi[0] - two_pi).abs() < 1e-10);
        assert!((p.xi[1] - 2.0 * two_pi).abs() < 1e-5);
        assert!((p.etabar[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_pole_closed_form() {
        // For K = 1: ξ = 2 / λ with λ = 1/sqrt(15) and η̄ = b(2)/2 = 5/2.
        let p = pade_frequencies(1).unwrap();
        assert!((p.xi[0] - 2.0 * 15f64.sqrt()).abs() < 1e-12);
        assert!((p.etabar[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn trivial_bracket_without_poles() {
        let s = hierarchy_coefficients(&bath(1.0, 1.0, 0, 1.0), Axis::X, 1.0, 1.0).unwrap();
        assert_eq!(s.a0, 1.0);
        assert_eq!(s.b0, 0.5);
        assert!(s.aj.is_empty());
        assert_eq!(s.nu, vec![1.0]);
    }

    #[test]
    fn decoupled_bath_is_all_zero() {
        let s = hierarchy_coefficients(&bath(0.0, 1.0, 3, 1.0), Axis::Y, 1.0, 1.0).unwrap();
        assert_eq!(s.a0, 0.0);
        assert_eq!(s.b0, 0.0);
        assert!(s.aj.iter().all(|&a| a == 0.0));
        assert_eq!(s.nu.len(), 4);
    }

    #[test]
    fn a0_matches_resummed_matsubara() {
        // With every Matsubara pole included, a0 = (η r0 γ²/2) cot(βħγ/2).
        let s = hierarchy_coefficients(&bath(1.0, 1.0, 2, 1.0), Axis::X, 1.0, 1.0).unwrap();
        let exact = 0.5 / (0.5f64).tan();
        assert!((s.a0 - exact).abs() / exact < 1e-9, "a0 = {}, exact = {exact}", s.a0);
        // A 10^4-term Matsubara sum converges to the same value only as 1/N.
        let mats = matsubara_a0(1.0, 1.0, 1.0, 10_000);
        assert!((mats - exact).abs() / exact < 1e-5);
    }

    #[test]
    fn correlation_at_positive_times_matches_matsubara_oracle() {
        let s = hierarchy_coefficients(&bath(1.0, 1.0, 4, 1.0), Axis::X, 1.0, 1.0).unwrap();
        for t in [0.5, 1.0] {
            let g = 1.0f64;
            let mut oracle = 0.5 * g * g / (0.5 * g).tan() * (-g * t).exp();
            for j in 1..=10_000 {
                let nu = 2.0 * std::f64::consts::PI * j as f64;
                oracle -= g * g * 2.0 * nu / (g * g - nu * nu) * (-nu * t).exp();
            }
            let got = symmetrized_correlation(&s, t);
            assert!((got - oracle).abs() / oracle < 1e-6, "t = {t}: {got} vs {oracle}");
        }
    }

    #[test]
    fn surrogate_error_values() {
        let set = |k| hierarchy_coefficients(&bath(1.0, 1.0, k, 1.0), Axis::X, 1.0, 1.0).unwrap();
        assert!(coth_surrogate_error(&set(4), 2.5) < 1e-10);
        assert!(coth_surrogate_error(&set(4), 5.0) < 1e-6);
        assert!(coth_surrogate_error(&set(6), 5.0) < 1e-10);
        assert!(coth_surrogate_error(&set(2), 2.5) < 2e-4);
        assert!(coth_surrogate_error(&set(2), 1.0) < 1e-6);
        // K = 0 leaves only the 1/x pole; error shrinks like x/3.
        assert!(coth_surrogate_error(&set(0), 1e-6) < 1e-6);
        assert!(coth_surrogate_error(&set(2), 5.0) <= coth_surrogate_error(&set(1), 5.0));
    }

    #[test]
    fn surrogate_error_is_monotone_in_k() {
        for xmax in [1.0, 2.5, 5.0, 10.0] {
            let errs: Vec<f64> = (0..=6).map(|k| surrogate_error(&pade_frequencies(k).unwrap(), xmax)).collect();
            assert!(errs.windows(2).all(|w| w[1] <= w[0]), "xmax = {xmax}: {errs:?}");
        }
    }

    #[test]
    fn classical_limit_bracket_tends_to_one() {
        let beta = 1e-6;
        let s = hierarchy_coefficients(&bath(0.7, 1.3, 4, beta), Axis::X, 1.0, 1.0).unwrap();
        assert!((s.a0 * beta / (0.7 * 1.3) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pole_collision_is_reported() {
        let p = pade_frequencies(1).unwrap();
        // Choose γ exactly on ν_1 = ξ_1/(βħ).
        let b = bath(1.0, p.xi[0], 1, 1.0);
        assert!(matches!(hierarchy_coefficients(&b, Axis::X, 1.0, 1.0), Err(PadeError::PoleCollision { .. })));
    }

    #[test]
    fn invalid_bath_rejected() {
        assert!(hierarchy_coefficients(&bath(-1.0, 1.0, 1, 1.0), Axis::X, 1.0, 1.0).is_err());
        assert!(hierarchy_coefficients(&bath(1.0, 0.0, 1, 1.0), Axis::X, 1.0, 1.0).is_err());
        assert!(hierarchy_coefficients(&bath(1.0, 1.0, 1, 0.0), Axis::X, 1.0, 1.0).is_err());
    }

    #[test]
    fn entries_are_finite() {
        for k in 0..8 {
            for beta in [0.1, 1.0, 2.5, 10.0] {
                let s = hierarchy_coefficients(&bath(0.5, 1.0, k, beta), Axis::X, 1.0, 1.0).unwrap();
                assert!(s.a0.is_finite() && s.b0.is_finite());
                assert!(s.aj.iter().chain(&s.nu).all(|v| v.is_finite()));
                assert!(s.nu.iter().all(|&v| v > 0.0));
                assert!(s.nu[1..].windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
