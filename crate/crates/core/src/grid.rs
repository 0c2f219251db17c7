//! Discretized Wigner phase space for a ring: a half-integer momentum lattice
//! `p_n = n ħ / 2`, `n = -Np..=Np`, times a uniform periodic angle grid
//! `θ_m = 2π m / M`.
//!
//! Fields are stored row-major with one row per momentum index and the angle
//! index running fastest. Row `r` holds `n = r - Np`. Every shift or
//! difference in the momentum direction reads out-of-range rows as zero.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("angle grid needs an even number of points >= 8, got {0}")]
    AnglePoints(usize),
    #[error("momentum cutoff must be positive")]
    MomentumCutoff,
    #[error("hbar must be positive and finite, got {0}")]
    Hbar(f64),
    #[error("field shape {got:?} does not match grid shape {expected:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
}

#[derive(Clone, Debug)]
pub struct PhaseSpaceGrid {
    np: usize,
    m: usize,
    hbar: f64,
    theta: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
    /// Periodic spectral differentiation matrix, column-major `m × m`.
    diff: Vec<f64>,
}

impl PhaseSpaceGrid {
    pub fn new(np: usize, m: usize, hbar: f64) -> Result<Self, GridError> {
        if m < 8 || m % 2 != 0 {
            return Err(GridError::AnglePoints(m));
        }
        if np == 0 {
            return Err(GridError::MomentumCutoff);
        }
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(GridError::Hbar(hbar));
        }
        let step = 2.0 * PI / m as f64;
        let theta: Vec<f64> = (0..m).map(|j| step * j as f64).collect();
        // Exact values at the symmetry points keep sin(0) = sin(π) = 0 bit-for-bit.
        let cos = (0..m).map(|j| exact_cos(j, m)).collect();
        let sin = (0..m).map(|j| exact_cos((j + 3 * m / 4) % m, m)).collect::<Vec<_>>();
        let sin = if m % 4 == 0 { sin } else { theta.iter().map(|t| t.sin()).collect() };

        // D_ij = ½ (-1)^(i-j) cot((i-j) h / 2): the derivative of the trigonometric
        // interpolant with the Nyquist mode dropped.
        let mut diff = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    let k = i as isize - j as isize;
                    let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    diff[j * m + i] = 0.5 * sign / (0.5 * k as f64 * step).tan();
                }
            }
        }
        Ok(Self { np, m, hbar, theta, cos, sin, diff })
    }

    pub fn momentum_cutoff(&self) -> usize {
        self.np
    }

    /// Number of momentum rows, `2 Np + 1`.
    pub fn rows(&self) -> usize {
        2 * self.np + 1
    }

    /// Number of angle points `M`.
    pub fn cols(&self) -> usize {
        self.m
    }

    pub fn cells(&self) -> usize {
        self.rows() * self.m
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.m)
    }

    pub fn n_of_row(&self, row: usize) -> i64 {
        row as i64 - self.np as i64
    }

    pub fn row_of_n(&self, n: i64) -> Option<usize> {
        let r = n + self.np as i64;
        (0..self.rows() as i64).contains(&r).then_some(r as usize)
    }

    /// `p_n = n ħ / 2` for the given row.
    pub fn momentum(&self, row: usize) -> f64 {
        0.5 * self.hbar * self.n_of_row(row) as f64
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn cos_theta(&self) -> &[f64] {
        &self.cos
    }

    pub fn sin_theta(&self) -> &[f64] {
        &self.sin
    }

    pub fn theta_step(&self) -> f64 {
        2.0 * PI / self.m as f64
    }

    /// Quadrature weight of one cell: `(ħ/2) · (2π/M)`.
    pub fn cell_weight(&self) -> f64 {
        0.5 * self.hbar * self.theta_step()
    }

    /// `dst = D src` for one momentum row.
    #[inline]
    pub(crate) fn dtheta_row(&self, src: &[f64], dst: &mut [f64]) {
        let m = self.m;
        dst.fill(0.0);
        for (col, &w) in self.diff.chunks_exact(m).zip(src) {
            for (d, c) in dst.iter_mut().zip(col) {
                *d += c * w;
            }
        }
    }

    /// `dst = δ src / δp_n = (src(p_{n+1}) - src(p_{n-1})) / ħ`.
    pub fn dpn_into(&self, src: &[f64], dst: &mut [f64]) {
        let (rows, m) = self.shape();
        let inv = 1.0 / self.hbar;
        for r in 0..rows {
            let out = &mut dst[r * m..(r + 1) * m];
            for (j, o) in out.iter_mut().enumerate() {
                let up = if r + 1 < rows { src[(r + 1) * m + j] } else { 0.0 };
                let down = if r > 0 { src[(r - 1) * m + j] } else { 0.0 };
                *o = (up - down) * inv;
            }
        }
    }

    /// `dst(p_n) = src(p_{n+k})`, zero where `n + k` leaves the lattice.
    pub fn pshift_into(&self, src: &[f64], k: i64, dst: &mut [f64]) {
        let (rows, m) = self.shape();
        for r in 0..rows {
            let from = r as i64 + k;
            let out = &mut dst[r * m..(r + 1) * m];
            if (0..rows as i64).contains(&from) {
                let f = from as usize;
                out.copy_from_slice(&src[f * m..(f + 1) * m]);
            } else {
                out.fill(0.0);
            }
        }
    }

    /// Spectral angle derivative, row by row.
    pub fn dtheta_into(&self, src: &[f64], dst: &mut [f64]) {
        let m = self.m;
        for (s, d) in src.chunks_exact(m).zip(dst.chunks_exact_mut(m)) {
            self.dtheta_row(s, d);
        }
    }

    /// `(ħ/2) Σ_n ∫ dθ f` with the angle integral as a uniform Riemann sum.
    pub fn integrate_slice(&self, src: &[f64]) -> f64 {
        self.cell_weight() * src.iter().sum::<f64>()
    }

    pub fn dpn(&self, f: &Field) -> Field {
        let mut out = Field::zeros(self);
        self.dpn_into(&f.values, &mut out.values);
        out
    }

    pub fn pshift(&self, f: &Field, k: i64) -> Field {
        let mut out = Field::zeros(self);
        self.pshift_into(&f.values, k, &mut out.values);
        out
    }

    pub fn dtheta(&self, f: &Field) -> Field {
        let mut out = Field::zeros(self);
        self.dtheta_into(&f.values, &mut out.values);
        out
    }

    pub fn integrate(&self, f: &Field) -> f64 {
        self.integrate_slice(&f.values)
    }
}

/// cos(2π j / M) with exact zeros and units at quarter turns.
fn exact_cos(j: usize, m: usize) -> f64 {
    if m % 4 == 0 {
        let q = m / 4;
        if j % q == 0 {
            return [1.0, 0.0, -1.0, 0.0][j / q];
        }
    } else if 2 * j == m {
        return -1.0;
    } else if j == 0 {
        return 1.0;
    }
    (2.0 * PI * j as f64 / m as f64).cos()
}

/// One auxiliary Wigner function on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &PhaseSpaceGrid) -> Self {
        Self { rows: grid.rows(), cols: grid.cols(), values: vec![0.0; grid.cells()] }
    }

    /// Builds a field from `f(n, θ)`.
    pub fn from_fn(grid: &PhaseSpaceGrid, mut f: impl FnMut(i64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for r in 0..grid.rows() {
            let n = grid.n_of_row(r);
            for (j, &th) in grid.theta().iter().enumerate() {
                out.values[r * grid.cols() + j] = f(n, th);
            }
        }
        out
    }

    pub fn from_values(grid: &PhaseSpaceGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.cells() {
            return Err(GridError::Shape { expected: grid.shape(), got: (values.len() / grid.cols().max(1), grid.cols()) });
        }
        Ok(Self { rows: grid.rows(), cols: grid.cols(), values })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.cols + col] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `a·self + b·other`.
    pub fn lincomb(&self, a: f64, other: &Field, b: f64) -> Field {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Field { rows: self.rows, cols: self.cols, values }
    }

    /// Pointwise product with an angle profile (one value per column).
    pub fn scale_theta(&self, profile: &[f64]) -> Field {
        let mut out = self.clone();
        for row in out.values.chunks_exact_mut(self.cols) {
            for (v, p) in row.iter_mut().zip(profile) {
                *v *= p;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> PhaseSpaceGrid {
        PhaseSpaceGrid::new(6, 16, 1.0).unwrap()
    }

    fn random_field(g: &PhaseSpaceGrid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(g, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn rejects_bad_shapes() {
        assert_eq!(PhaseSpaceGrid::new(4, 6, 1.0).unwrap_err(), GridError::AnglePoints(6));
        assert_eq!(PhaseSpaceGrid::new(4, 9, 1.0).unwrap_err(), GridError::AnglePoints(9));
        assert_eq!(PhaseSpaceGrid::new(0, 8, 1.0).unwrap_err(), GridError::MomentumCutoff);
        assert!(PhaseSpaceGrid::new(4, 8, 0.0).is_err());
    }

    #[test]
    fn theta_zero_and_pi_are_grid_points() {
        let g = grid();
        assert_eq!(g.theta()[0], 0.0);
        assert_eq!(g.sin_theta()[8], 0.0);
        assert_eq!(g.cos_theta()[8], -1.0);
        assert_eq!(g.momentum(g.row_of_n(3).unwrap()), 1.5);
    }

    #[test]
    fn dpn_of_constant_telescopes_to_edges() {
        let g = grid();
        let c = 2.5;
        let d = g.dpn(&Field::from_fn(&g, |_, _| c));
        for j in 0..g.cols() {
            assert_eq!(d.get(0, j), c / g.hbar());
            assert_eq!(d.get(g.rows() - 1, j), -c / g.hbar());
            for r in 1..g.rows() - 1 {
                assert_eq!(d.get(r, j), 0.0);
            }
        }
    }

    #[test]
    fn dpn_of_linear_is_two_over_hbar() {
        let g = PhaseSpaceGrid::new(6, 8, 0.5).unwrap();
        let d = g.dpn(&Field::from_fn(&g, |n, _| n as f64));
        for r in 1..g.rows() - 1 {
            assert!((d.get(r, 3) - 2.0 / 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn dpn_matches_index_shift_oracle() {
        let g = grid();
        let f = random_field(&g, 1);
        let d = g.dpn(&f);
        let (rows, m) = g.shape();
        for r in 0..rows {
            for j in 0..m {
                let up = if r + 1 < rows { f.get(r + 1, j) } else { 0.0 };
                let dn = if r >= 1 { f.get(r - 1, j) } else { 0.0 };
                assert_eq!(d.get(r, j), (up - dn) / g.hbar());
            }
        }
    }

    #[test]
    fn pshift_moves_delta_down() {
        let g = grid();
        let zero = g.row_of_n(0).unwrap();
        let f = Field::from_fn(&g, |n, th| if n == 0 && th == 0.0 { 1.0 } else { 0.0 });
        assert_eq!(g.pshift(&f, 0), f);
        let s = g.pshift(&f, 1);
        assert_eq!(s.get(zero - 1, 0), 1.0);
        assert_eq!(s.values().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn pshift_round_trip_loses_only_edge_rows() {
        let g = grid();
        for seed in 0..5 {
            let f = random_field(&g, seed);
            let back = g.pshift(&g.pshift(&f, 1), -1);
            for r in 0..g.rows() {
                let n = g.n_of_row(r);
                for j in 0..g.cols() {
                    if n == -(g.momentum_cutoff() as i64) {
                        assert_eq!(back.get(r, j), 0.0);
                    } else {
                        assert_eq!(back.get(r, j), f.get(r, j));
                    }
                }
            }
        }
    }

    #[test]
    fn dtheta_annihilates_constants_and_rotates_cosines() {
        let g = grid();
        let d = g.dtheta(&Field::from_fn(&g, |_, _| 3.0));
        assert!(d.max_abs() < 1e-13);
        for k in 1..g.cols() / 2 {
            let f = Field::from_fn(&g, |_, th| (k as f64 * th).cos());
            let want = Field::from_fn(&g, |_, th| -(k as f64) * (k as f64 * th).sin());
            assert!(g.dtheta(&f).lincomb(1.0, &want, -1.0).max_abs() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn dtheta_band_limited_random() {
        let g = PhaseSpaceGrid::new(3, 32, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coef: Vec<(f64, f64)> = (0..16).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let f = Field::from_fn(&g, |n, th| {
            coef.iter().enumerate().map(|(k, (a, b))| (1.0 + n as f64) * (a * (k as f64 * th).cos() + b * (k as f64 * th).sin())).sum()
        });
        let want = Field::from_fn(&g, |n, th| {
            coef.iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let k = k as f64;
                    (1.0 + n as f64) * k * (-a * (k * th).sin() + b * (k * th).cos())
                })
                .sum()
        });
        assert!(g.dtheta(&f).lincomb(1.0, &want, -1.0).max_abs() < 1e-13 * want.max_abs());
    }

    #[test]
    fn integrate_normalized_constant() {
        let g = grid();
        let c = 1.0 / (PI * g.hbar() * g.rows() as f64);
        assert!((g.integrate(&Field::from_fn(&g, |_, _| c)) - 1.0).abs() < 1e-14);
        assert_eq!(g.integrate(&Field::zeros(&g)), 0.0);
    }

    proptest! {
        #[test]
        fn operators_are_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0, k in -4i64..=4) {
            let g = grid();
            let f = random_field(&g, seed);
            let h = random_field(&g, seed + 10_000);
            let comb = f.lincomb(a, &h, b);
            let lhs = g.dpn(&comb);
            let rhs = g.dpn(&f).lincomb(a, &g.dpn(&h), b);
            prop_assert!(lhs.lincomb(1.0, &rhs, -1.0).max_abs() < 1e-12);
            let lhs = g.pshift(&comb, k);
            let rhs = g.pshift(&f, k).lincomb(a, &g.pshift(&h, k), b);
            prop_assert!(lhs.lincomb(1.0, &rhs, -1.0).max_abs() < 1e-12);
            let li = g.integrate(&comb);
            prop_assert!((li - (a * g.integrate(&f) + b * g.integrate(&h))).abs() < 1e-11);
        }

        #[test]
        fn integral_is_translation_invariant(seed in 0u64..1000, shift in 0usize..16) {
            let g = grid();
            let f = random_field(&g, seed);
            let m = g.cols();
            let rolled = Field::from_values(
                &g,
                (0..g.cells()).map(|i| f.values()[(i / m) * m + (i % m + shift) % m]).collect(),
            ).unwrap();
            prop_assert!((g.integrate(&f) - g.integrate(&rolled)).abs() < 1e-12);
        }
    }
}
