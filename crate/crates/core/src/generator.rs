//! Right-hand side of the hierarchical quantum Fokker-Planck equations on
//! the ring.
//!
//! For every multi-index `n` the generator evaluates
//!
//! ```text
//! ∂W_n/∂t = -(L_qm + Σ n_α^j ν_α^j) W_n
//!           + Σ_{α,j} Φ_α W_{n+e_α^j}
//!           + Σ_{α,j} n_α^j Θ_α^j W_{n-e_α^j}
//! ```
//!
//! with `Φ_α = r0 f_α(θ) δ/δp_n`, the fluctuation/dissipation pair in `Θ_α^0`
//! and the Padé-mode terms `Θ_α^j`. The angle profiles are
//! `f_x = -sin θ`, `f_y = cos θ`, `g_x = cos θ`, `g_y = sin θ`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Field, PhaseSpaceGrid};
use crate::hierarchy::HierarchyIndexSet;
use crate::pade::{hierarchy_coefficients, Axis, BathSpec, PadeError, PadeSet};
use crate::parallel::Workers;
use crate::propagator::{HeomState, OdeSystem, PropagationError, StateLayout};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("ring parameter {0}")]
    InvalidRing(String),
    #[error("potential is not real: U_{{-{k}}} is not the conjugate of U_{k}")]
    ComplexPotential { k: i32 },
    #[error("potential harmonic {k} is out of reach of a {rows}-row momentum grid")]
    PotentialHarmonic { k: u32, rows: usize },
    #[error("Padé mode {j} out of range 1..={k} on axis {axis}")]
    ModeOutOfRange { axis: Axis, j: usize, k: usize },
    #[error("hierarchy was built for Kx = {hx}, Ky = {hy} but the bath has Kx = {bx}, Ky = {by}")]
    HierarchyMismatch { hx: usize, hy: usize, bx: usize, by: usize },
    #[error(transparent)]
    Pade(#[from] PadeError),
}

/// Static periodic potential `U(θ) = Σ_k c_k cos kθ + s_k sin kθ` (k ≥ 1).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    terms: Vec<(u32, f64, f64)>,
}

impl Potential {
    pub fn none() -> Self {
        Self::default()
    }

    /// From real cosine/sine amplitudes keyed by harmonic.
    pub fn from_series(terms: impl IntoIterator<Item = (u32, f64, f64)>) -> Self {
        let mut terms: Vec<_> = terms.into_iter().filter(|&(k, c, s)| k > 0 && (c != 0.0 || s != 0.0)).collect();
        terms.sort_by_key(|t| t.0);
        Self { terms }
    }

    /// From Fourier coefficients `U_k = (re, im)` of `U(θ) = Σ_k U_k e^{ikθ}`.
    /// Both `k` and `-k` must be present with `U_{-k} = conj(U_k)`; `U_0`
    /// only shifts the energy and is dropped.
    pub fn from_fourier(coefs: &[(i32, f64, f64)]) -> Result<Self, GeneratorError> {
        let get = |k: i32| coefs.iter().find(|c| c.0 == k).map(|c| (c.1, c.2));
        let mut terms = Vec::new();
        for &(k, re, im) in coefs {
            let (mre, mim) = get(-k).ok_or(GeneratorError::ComplexPotential { k: k.abs() })?;
            let tol = 1e-14 * (1.0 + re.abs() + im.abs());
            if (mre - re).abs() > tol || (mim + im).abs() > tol {
                return Err(GeneratorError::ComplexPotential { k: k.abs() });
            }
            if k > 0 {
                terms.push((k as u32, 2.0 * re, -2.0 * im));
            } else if k == 0 && im != 0.0 {
                return Err(GeneratorError::ComplexPotential { k: 0 });
            }
        }
        Ok(Self::from_series(terms))
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[(u32, f64, f64)] {
        &self.terms
    }

    pub fn value(&self, theta: f64) -> f64 {
        self.terms.iter().map(|&(k, c, s)| c * (k as f64 * theta).cos() + s * (k as f64 * theta).sin()).sum()
    }

    /// Angle profiles `(c_k sin kθ - s_k cos kθ)/ħ` multiplying
    /// `W(p_{n-k}) - W(p_{n+k})` in the Moyal bracket.
    fn stencil(&self, grid: &PhaseSpaceGrid) -> Vec<(usize, Vec<f64>)> {
        self.terms
            .iter()
            .map(|&(k, c, s)| {
                let prof = grid.theta().iter().map(|&th| (c * (k as f64 * th).sin() - s * (k as f64 * th).cos()) / grid.hbar()).collect();
                (k as usize, prof)
            })
            .collect()
    }
}

/// Particle on a ring threaded by a flux.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    pub mass: f64,
    pub radius: f64,
    pub charge: f64,
    /// Dimensionless flux `Φ̄`; the gauge momentum shift is `ħ Φ̄`.
    pub flux: f64,
    pub hbar: f64,
    pub potential: Potential,
}

impl Default for RingSpec {
    fn default() -> Self {
        Self { mass: 0.5, radius: 1.0, charge: -1.0, flux: 0.0, hbar: 1.0, potential: Potential::none() }
    }
}

impl RingSpec {
    pub fn inertia(&self) -> f64 {
        self.mass * self.radius * self.radius
    }

    /// `ω0 = ħ / (2 I)`.
    pub fn omega0(&self) -> f64 {
        self.hbar / (2.0 * self.inertia())
    }

    /// `E_n = (n - Φ̄)² ħ ω0`.
    pub fn eigenenergy(&self, n: i64) -> f64 {
        let d = n as f64 - self.flux;
        d * d * self.hbar * self.omega0()
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(GeneratorError::InvalidRing(format!("{name} must be positive, got {v}")))
            }
        };
        positive("mass", self.mass)?;
        positive("radius", self.radius)?;
        positive("hbar", self.hbar)?;
        if !(self.charge.is_finite() && self.charge != 0.0) {
            return Err(GeneratorError::InvalidRing(format!("charge must be nonzero, got {}", self.charge)));
        }
        if !self.flux.is_finite() {
            return Err(GeneratorError::InvalidRing("flux must be finite".into()));
        }
        Ok(())
    }
}

/// Grid-resolved coefficients shared by every right-hand-side evaluation.
#[derive(Clone, Debug)]
pub struct GeneratorTables {
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub sin2: Vec<f64>,
    /// `r0² (η_y γ_y - η_x γ_x) / (4ħ)`.
    pub counterterm: f64,
    /// `(p_n - ħΦ̄) / I` per momentum row.
    pub drift: Vec<f64>,
    pub pade: [PadeSet; 2],
    pub r0: f64,
    /// Verbatim zeroth lowering operator: fluctuation term without `f_α(θ)`.
    pub strict_paper_form: bool,
    potential: Vec<(usize, Vec<f64>)>,
}

impl GeneratorTables {
    pub fn new(grid: &PhaseSpaceGrid, ring: &RingSpec, bath: &BathSpec, strict_paper_form: bool) -> Result<Self, GeneratorError> {
        ring.validate()?;
        bath.validate()?;
        if (ring.hbar - grid.hbar()).abs() > 1e-15 * ring.hbar {
            return Err(GeneratorError::InvalidRing(format!("hbar {} differs from the grid's {}", ring.hbar, grid.hbar())));
        }
        for &(k, _, _) in ring.potential.terms() {
            if k as usize >= grid.rows() {
                return Err(GeneratorError::PotentialHarmonic { k, rows: grid.rows() });
            }
        }
        let r0 = ring.radius;
        let cos = grid.cos_theta().to_vec();
        let sin = grid.sin_theta().to_vec();
        let sin2 = cos.iter().zip(&sin).map(|(c, s)| 2.0 * s * c).collect();
        let inertia = ring.inertia();
        let drift = (0..grid.rows()).map(|r| (grid.momentum(r) - ring.hbar * ring.flux) / inertia).collect();
        let counterterm = r0 * r0 * (bath.eta_y * bath.gamma_y - bath.eta_x * bath.gamma_x) / (4.0 * ring.hbar);
        let pade = [hierarchy_coefficients(bath, Axis::X, r0, ring.hbar)?, hierarchy_coefficients(bath, Axis::Y, r0, ring.hbar)?];
        Ok(Self {
            fx: sin.iter().map(|s| -s).collect(),
            fy: cos.clone(),
            gx: cos,
            gy: sin,
            sin2,
            counterterm,
            drift,
            pade,
            r0,
            strict_paper_form,
            potential: ring.potential.stencil(grid),
        })
    }

    pub fn f(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.fx,
            Axis::Y => &self.fy,
        }
    }

    pub fn g(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.gx,
            Axis::Y => &self.gy,
        }
    }

    pub fn pade(&self, axis: Axis) -> &PadeSet {
        &self.pade[axis.index()]
    }
}

// Individual operators on single fields. The fused kernel in `HeomGenerator`
// evaluates the same algebra without intermediate allocations.

/// `-L_qm W`: drift, counterterm and the potential's Moyal bracket.
pub fn liouvillian(grid: &PhaseSpaceGrid, tables: &GeneratorTables, w: &Field) -> Field {
    let m = grid.cols();
    let dth = grid.dtheta(w);
    let mut out = Field::zeros(grid);
    for r in 0..grid.rows() {
        for j in 0..m {
            out.set(r, j, -tables.drift[r] * dth.get(r, j));
        }
    }
    if tables.counterterm != 0.0 {
        let diff = grid.pshift(w, 2).lincomb(1.0, &grid.pshift(w, -2), -1.0);
        out = out.lincomb(1.0, &diff.scale_theta(&tables.sin2), tables.counterterm);
    }
    for (k, prof) in &tables.potential {
        let k = *k as i64;
        let diff = grid.pshift(w, -k).lincomb(1.0, &grid.pshift(w, k), -1.0);
        out = out.lincomb(1.0, &diff.scale_theta(prof), 1.0);
    }
    out
}

/// Moyal bracket `-(i/ħ)[U, ρ]` of a static potential in Wigner form:
/// `(1/ħ) Σ_k (c_k sin kθ - s_k cos kθ) (W(p_{n-k}) - W(p_{n+k}))`.
pub fn potential_kernel(grid: &PhaseSpaceGrid, potential: &Potential, w: &Field) -> Field {
    let mut out = Field::zeros(grid);
    for (k, prof) in potential.stencil(grid) {
        let k = k as i64;
        let diff = grid.pshift(w, -k).lincomb(1.0, &grid.pshift(w, k), -1.0);
        out = out.lincomb(1.0, &diff.scale_theta(&prof), 1.0);
    }
    out
}

/// `Φ_α W = r0 f_α(θ) δW/δp_n`.
pub fn phi(grid: &PhaseSpaceGrid, tables: &GeneratorTables, axis: Axis, w: &Field) -> Field {
    let d = grid.dpn(w).scale_theta(tables.f(axis));
    d.lincomb(tables.r0, &d, 0.0)
}

/// Zeroth lowering operator: fluctuation `a0 [f_α(θ)] δW/δp_n` and
/// dissipation `-b0 g_α(θ) (W(p_{n+1}) + W(p_{n-1}))`.
pub fn theta0(grid: &PhaseSpaceGrid, tables: &GeneratorTables, axis: Axis, w: &Field, strict_paper_form: bool) -> Field {
    let set = tables.pade(axis);
    let d = grid.dpn(w);
    let fluct = if strict_paper_form { d } else { d.scale_theta(tables.f(axis)) };
    let sum = grid.pshift(w, 1).lincomb(1.0, &grid.pshift(w, -1), 1.0).scale_theta(tables.g(axis));
    fluct.lincomb(set.a0, &sum, -set.b0)
}

/// Padé-mode lowering operator `a_j f_α(θ) δ/δp_n`, `j = 1..K_α`.
pub fn thetaj(grid: &PhaseSpaceGrid, tables: &GeneratorTables, axis: Axis, j: usize, w: &Field) -> Result<Field, GeneratorError> {
    let set = tables.pade(axis);
    if j == 0 || j > set.poles() {
        return Err(GeneratorError::ModeOutOfRange { axis, j, k: set.poles() });
    }
    let d = grid.dpn(w).scale_theta(tables.f(axis));
    Ok(d.lincomb(set.aj[j - 1], &d, 0.0))
}

/// The full hierarchy right-hand side as an ODE system.
#[derive(Clone, Debug)]
pub struct HeomGenerator {
    grid: PhaseSpaceGrid,
    hierarchy: Arc<HierarchyIndexSet>,
    tables: GeneratorTables,
    decay: Vec<f64>,
    error_cells: Vec<usize>,
    workers: Workers,
}

struct Scratch {
    fluct: Vec<f64>,
    diss: Vec<f64>,
    strict: Vec<f64>,
}

impl HeomGenerator {
    pub fn new(
        grid: PhaseSpaceGrid,
        hierarchy: Arc<HierarchyIndexSet>,
        tables: GeneratorTables,
        workers: Workers,
    ) -> Result<Self, GeneratorError> {
        let (bx, by) = (tables.pade[0].poles(), tables.pade[1].poles());
        if hierarchy.kx() != bx || hierarchy.ky() != by {
            return Err(GeneratorError::HierarchyMismatch { hx: hierarchy.kx(), hy: hierarchy.ky(), bx, by });
        }
        let decay = hierarchy.decay_rates(&tables.pade[0], &tables.pade[1]);
        // θ = 0 column of the root function.
        let error_cells = (0..grid.rows()).map(|r| r * grid.cols()).collect();
        Ok(Self { grid, hierarchy, tables, decay, error_cells, workers })
    }

    pub fn grid(&self) -> &PhaseSpaceGrid {
        &self.grid
    }

    pub fn hierarchy(&self) -> &HierarchyIndexSet {
        &self.hierarchy
    }

    pub fn tables(&self) -> &GeneratorTables {
        &self.tables
    }

    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    pub fn workers(&self) -> &Workers {
        &self.workers
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout { ados: self.hierarchy.len(), rows: self.grid.rows(), cols: self.grid.cols() }
    }

    /// Derivative of a full state.
    pub fn rhs(&self, state: &HeomState) -> Result<HeomState, PropagationError> {
        let mut out = HeomState::zeros(state.layout());
        out.t = state.t;
        out.dt = state.dt;
        self.rhs_into(state.data(), out.data_mut())?;
        Ok(out)
    }

    pub fn rhs_into(&self, y: &[f64], dy: &mut [f64]) -> Result<(), PropagationError> {
        let cells = self.grid.cells();
        let expected = cells * self.hierarchy.len();
        if y.len() != expected || dy.len() != expected {
            return Err(PropagationError::Shape { expected, got: y.len().min(dy.len()) });
        }
        let finite = AtomicBool::new(true);
        self.workers.for_each_chunk(
            dy,
            cells,
            || Scratch { fluct: vec![0.0; cells], diss: vec![0.0; cells], strict: vec![0.0; cells] },
            |scratch, id, out| {
                self.ado_rhs(id, y, out, scratch);
                if !out.iter().all(|v| v.is_finite()) {
                    finite.store(false, Ordering::Relaxed);
                }
            },
        );
        if finite.into_inner() {
            Ok(())
        } else {
            Err(PropagationError::NonFinite)
        }
    }

    fn ado_rhs(&self, id: usize, y: &[f64], out: &mut [f64], s: &mut Scratch) {
        let grid = &self.grid;
        let (rows, m) = grid.shape();
        let cells = rows * m;
        let t = &self.tables;
        let w = &y[id * cells..(id + 1) * cells];
        let ado = |k: usize| &y[k * cells..(k + 1) * cells];
        let inv_hbar = 1.0 / grid.hbar();

        // Free drift and hierarchy damping.
        let decay = self.decay[id];
        for r in 0..rows {
            let row = &w[r * m..(r + 1) * m];
            let o = &mut out[r * m..(r + 1) * m];
            grid.dtheta_row(row, o);
            let v = t.drift[r];
            for (o, x) in o.iter_mut().zip(row) {
                *o = -v * *o - decay * x;
            }
        }

        if t.counterterm != 0.0 {
            let ct = t.counterterm;
            for r in 0..rows {
                let dn = r.checked_sub(2).and_then(|q| row(w, q, m));
                stencil(&mut out[r * m..(r + 1) * m], row(w, r + 2, m), dn, -1.0, |i| ct * t.sin2[i]);
            }
        }

        for (k, prof) in &t.potential {
            let k = *k;
            for r in 0..rows {
                let dn = r.checked_sub(k).and_then(|q| row(w, q, m));
                stencil(&mut out[r * m..(r + 1) * m], row(w, r + k, m), dn, -1.0, |i| -prof[i]);
            }
        }

        let h = &*self.hierarchy;
        let comps = h.components(id);
        for axis in Axis::BOTH {
            let set = t.pade(axis);
            let (mut any_f, mut any_d, mut any_s) = (false, false, false);
            for j in 0..=set.poles() {
                let slot = h.slot(axis, j);
                if let Some(p) = h.plus(id, slot) {
                    accumulate(&mut s.fluct, &mut any_f, t.r0, ado(p));
                }
                let n = comps[slot];
                if n == 0 {
                    continue;
                }
                let lower = ado(h.minus(id, slot).expect("nonzero component has a lower neighbor"));
                let n = n as f64;
                if j == 0 {
                    if t.strict_paper_form {
                        accumulate(&mut s.strict, &mut any_s, n * set.a0, lower);
                    } else {
                        accumulate(&mut s.fluct, &mut any_f, n * set.a0, lower);
                    }
                    accumulate(&mut s.diss, &mut any_d, n * set.b0, lower);
                } else {
                    accumulate(&mut s.fluct, &mut any_f, n * set.aj[j - 1], lower);
                }
            }
            let f = t.f(axis);
            let g = t.g(axis);
            for r in 0..rows {
                let o = &mut out[r * m..(r + 1) * m];
                if any_f {
                    stencil(o, row(&s.fluct, r + 1, m), r.checked_sub(1).and_then(|q| row(&s.fluct, q, m)), -1.0, |i| f[i] * inv_hbar);
                }
                if any_d {
                    stencil(o, row(&s.diss, r + 1, m), r.checked_sub(1).and_then(|q| row(&s.diss, q, m)), 1.0, |i| -g[i]);
                }
                if any_s {
                    stencil(o, row(&s.strict, r + 1, m), r.checked_sub(1).and_then(|q| row(&s.strict, q, m)), -1.0, |_| inv_hbar);
                }
            }
        }
    }
}

#[inline]
fn row(buf: &[f64], r: usize, m: usize) -> Option<&[f64]> {
    buf.get(r * m..(r + 1) * m)
}

/// `o += w(i) (up + sign·dn)`, missing rows read as zero.
#[inline]
fn stencil(o: &mut [f64], up: Option<&[f64]>, dn: Option<&[f64]>, sign: f64, w: impl Fn(usize) -> f64) {
    match (up, dn) {
        (Some(u), Some(d)) => {
            for (i, ((o, u), d)) in o.iter_mut().zip(u).zip(d).enumerate() {
                *o += w(i) * (u + sign * d);
            }
        }
        (Some(u), None) => {
            for (i, (o, u)) in o.iter_mut().zip(u).enumerate() {
                *o += w(i) * u;
            }
        }
        (None, Some(d)) => {
            for (i, (o, d)) in o.iter_mut().zip(d).enumerate() {
                *o += w(i) * (sign * d);
            }
        }
        (None, None) => {}
    }
}

/// `acc = c·src` on first use, `acc += c·src` afterwards.
fn accumulate(acc: &mut [f64], used: &mut bool, c: f64, src: &[f64]) {
    if *used {
        for (a, s) in acc.iter_mut().zip(src) {
            *a += c * s;
        }
    } else {
        for (a, s) in acc.iter_mut().zip(src) {
            *a = c * s;
        }
        *used = true;
    }
}

impl OdeSystem for HeomGenerator {
    fn dim(&self) -> usize {
        self.grid.cells() * self.hierarchy.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), PropagationError> {
        self.rhs_into(y, dydt)
    }

    fn error_components(&self) -> Option<&[usize]> {
        Some(&self.error_cells)
    }

    fn workers(&self) -> &Workers {
        &self.workers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bath(ex: f64, ey: f64, k: usize) -> BathSpec {
        BathSpec { eta_x: ex, eta_y: ey, gamma_x: 1.0, gamma_y: 1.0, k_x: k, k_y: k, beta: 1.0 }
    }

    fn setup(ring: &RingSpec, bath: &BathSpec, nmax: usize, strict: bool) -> HeomGenerator {
        let grid = PhaseSpaceGrid::new(5, 8, ring.hbar).unwrap();
        let tables = GeneratorTables::new(&grid, ring, bath, strict).unwrap();
        let h = Arc::new(HierarchyIndexSet::enumerate(bath.k_x, bath.k_y, nmax));
        HeomGenerator::new(grid, h, tables, Workers::serial()).unwrap()
    }

    fn random_field(g: &PhaseSpaceGrid, rng: &mut ChaCha8Rng) -> Field {
        Field::from_fn(g, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn diff(a: &Field, b: &Field) -> f64 {
        a.lincomb(1.0, b, -1.0).max_abs()
    }

    #[test]
    fn uniform_field_is_stationary_without_anisotropy() {
        let gen = setup(&RingSpec::default(), &bath(0.3, 0.3, 1), 1, false);
        let w = Field::from_fn(gen.grid(), |_, _| 0.7);
        assert!(liouvillian(gen.grid(), gen.tables(), &w).max_abs() < 1e-13);
    }

    #[test]
    fn flux_shifts_drift_uniformly() {
        let grid = PhaseSpaceGrid::new(5, 8, 1.0).unwrap();
        let b = bath(0.0, 0.0, 0);
        let t0 = GeneratorTables::new(&grid, &RingSpec::default(), &b, false).unwrap();
        let t1 = GeneratorTables::new(&grid, &RingSpec { flux: 0.5, ..RingSpec::default() }, &b, false).unwrap();
        let shift = -1.0 / (2.0 * 0.5);
        for (a, c) in t0.drift.iter().zip(&t1.drift) {
            assert!((c - a - shift).abs() < 1e-14);
        }
    }

    #[test]
    fn counterterm_stencil_on_point_mass() {
        // η_x γ_x = 1, η_y γ_y = 0.5: amplitude (0.5 - 1)/4 = -1/8.
        let ring = RingSpec::default();
        let grid = PhaseSpaceGrid::new(5, 8, 1.0).unwrap();
        let tables = GeneratorTables::new(&grid, &ring, &bath(1.0, 0.5, 0), false).unwrap();
        assert_eq!(tables.counterterm, -0.125);
        let col = 1; // θ = π/4
        let zero = grid.row_of_n(0).unwrap();
        let mut w = Field::zeros(&grid);
        w.set(zero, col, 1.0);
        let out = liouvillian(&grid, &tables, &w);
        let dth = grid.dtheta(&w);
        for r in 0..grid.rows() {
            for j in 0..grid.cols() {
                let mut want = -tables.drift[r] * dth.get(r, j);
                if j == col {
                    // W(p_{n+2}) - W(p_{n-2}) is +1 at n = -2 and -1 at n = +2.
                    let n = grid.n_of_row(r);
                    let stencil = if n == -2 {
                        1.0
                    } else if n == 2 {
                        -1.0
                    } else {
                        0.0
                    };
                    want += -0.125 * 1.0 * stencil;
                }
                assert!((out.get(r, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cos2_potential_reproduces_counterterm() {
        // U = u cos 2θ with u = r0² (η_x γ_x - η_y γ_y)/4.
        let grid = PhaseSpaceGrid::new(6, 16, 1.0).unwrap();
        let b = bath(1.0, 0.5, 0);
        let ring = RingSpec::default();
        let tables = GeneratorTables::new(&grid, &ring, &b, false).unwrap();
        let u = (1.0 - 0.5) / 4.0;
        let pot = Potential::from_series([(2, u, 0.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_field(&grid, &mut rng);
        let via_potential = potential_kernel(&grid, &pot, &w);
        let counter = grid.pshift(&w, 2).lincomb(1.0, &grid.pshift(&w, -2), -1.0).scale_theta(&tables.sin2);
        assert!(diff(&via_potential, &counter.lincomb(tables.counterterm, &counter, 0.0)) < 1e-14);
    }

    #[test]
    fn potential_fourier_form_and_single_mode() {
        let grid = PhaseSpaceGrid::new(6, 16, 1.0).unwrap();
        assert_eq!(potential_kernel(&grid, &Potential::none(), &Field::from_fn(&grid, |_, _| 1.0)).max_abs(), 0.0);
        // cos θ = (e^{iθ} + e^{-iθ}) / 2.
        let pot = Potential::from_fourier(&[(1, 0.5, 0.0), (-1, 0.5, 0.0), (0, 3.0, 0.0)]).unwrap();
        assert_eq!(pot.terms(), &[(1, 1.0, 0.0)]);
        let zero = grid.row_of_n(0).unwrap();
        let w = Field::from_fn(&grid, |n, _| if n == 0 { 1.0 } else { 0.0 });
        let out = potential_kernel(&grid, &pot, &w);
        for r in 0..grid.rows() {
            for (j, &th) in grid.theta().iter().enumerate() {
                // sin θ (W(n-1) - W(n+1)): +sin θ at n = 1, -sin θ at n = -1.
                let want = if r == zero + 1 {
                    th.sin()
                } else if r + 1 == zero {
                    -th.sin()
                } else {
                    0.0
                };
                assert!((out.get(r, j) - want).abs() < 1e-14);
            }
        }
        assert!(Potential::from_fourier(&[(1, 0.5, 0.1), (-1, 0.5, 0.1)]).is_err());
        assert!(Potential::from_fourier(&[(2, 0.5, 0.0)]).is_err());
        // sin kθ from U_k = -i s/2.
        let s = Potential::from_fourier(&[(3, 0.0, -0.25), (-3, 0.0, 0.25)]).unwrap();
        assert_eq!(s.terms(), &[(3, 0.0, 0.5)]);
        assert!((s.value(0.3) - 0.5 * (0.9f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn phi_vanishes_on_uniform_interior_and_at_theta_zero() {
        let gen = setup(&RingSpec::default(), &bath(1.0, 1.0, 0), 1, false);
        let g = gen.grid();
        let out = phi(g, gen.tables(), Axis::X, &Field::from_fn(g, |_, _| 1.0));
        for r in 1..g.rows() - 1 {
            for j in 0..g.cols() {
                assert_eq!(out.get(r, j), 0.0);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_field(g, &mut rng);
        let out = phi(g, gen.tables(), Axis::X, &w);
        for r in 0..g.rows() {
            assert_eq!(out.get(r, 0), 0.0);
        }
        let oracle = g.dpn(&w).scale_theta(&gen.tables().fy);
        assert!(diff(&phi(g, gen.tables(), Axis::Y, &w), &oracle) < 1e-15);
    }

    #[test]
    fn theta0_forms() {
        let grid = PhaseSpaceGrid::new(5, 8, 1.0).unwrap();
        let ring = RingSpec { mass: 1.0, ..RingSpec::default() };
        let t = GeneratorTables::new(&grid, &ring, &bath(1.0, 1.0, 0), false).unwrap();
        assert_eq!(t.pade(Axis::X).a0, 1.0);
        assert_eq!(t.pade(Axis::X).b0, 0.5);
        let zero = grid.row_of_n(0).unwrap();
        let col = 2; // θ = π/2
        let mut w = Field::zeros(&grid);
        w.set(zero, col, 1.0);
        let out = theta0(&grid, &t, Axis::Y, &w, false);
        // f_y(π/2) = 0 kills the fluctuation term; g_y(π/2) = 1.
        for r in 0..grid.rows() {
            for j in 0..grid.cols() {
                let want = if j == col && (r == zero + 1 || r + 1 == zero) { -0.5 } else { 0.0 };
                assert!((out.get(r, j) - want).abs() < 1e-15, "r={r} j={j}");
            }
        }
        let strict = theta0(&grid, &t, Axis::Y, &w, true);
        for r in 0..grid.rows() {
            // δW/δp_n of a delta at n = 0: +1 at n = -1, -1 at n = +1.
            let d = if r + 1 == zero {
                1.0
            } else if r == zero + 1 {
                -1.0
            } else {
                0.0
            };
            assert!((strict.get(r, col) - (out.get(r, col) + d)).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_field(&grid, &mut rng);
        let d = grid.dpn(&w);
        let gap = theta0(&grid, &t, Axis::X, &w, true).lincomb(1.0, &theta0(&grid, &t, Axis::X, &w, false), -1.0);
        let want = d.lincomb(1.0, &d.scale_theta(&t.fx), -1.0);
        assert!(diff(&gap, &want) < 1e-14);

        let decoupled = GeneratorTables::new(&grid, &ring, &bath(0.0, 0.0, 2), false).unwrap();
        assert_eq!(theta0(&grid, &decoupled, Axis::X, &w, false).max_abs(), 0.0);
        assert_eq!(thetaj(&grid, &decoupled, Axis::X, 1, &w).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn thetaj_matches_oracle_and_checks_range() {
        let grid = PhaseSpaceGrid::new(5, 8, 1.0).unwrap();
        let t = GeneratorTables::new(&grid, &RingSpec::default(), &bath(0.4, 0.2, 2), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_field(&grid, &mut rng);
        for axis in Axis::BOTH {
            for j in 1..=2 {
                let oracle = grid.dpn(&w).scale_theta(t.f(axis));
                let oracle = oracle.lincomb(t.pade(axis).aj[j - 1], &oracle, 0.0);
                assert!(diff(&thetaj(&grid, &t, axis, j, &w).unwrap(), &oracle) < 1e-15);
            }
            assert!(thetaj(&grid, &t, axis, 0, &w).is_err());
            assert!(thetaj(&grid, &t, axis, 3, &w).is_err());
        }
    }

    #[test]
    fn rhs_of_zero_is_zero_and_closed_system_is_liouvillian() {
        let ring = RingSpec { flux: 0.2, ..RingSpec::default() };
        let gen = setup(&ring, &bath(0.5, 0.1, 1), 2, false);
        let zero = HeomState::zeros(gen.layout());
        assert_eq!(gen.rhs(&zero).unwrap().data().iter().fold(0.0f64, |a, v| a.max(v.abs())), 0.0);

        let closed = setup(&ring, &bath(0.0, 0.0, 0), 0, false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_field(closed.grid(), &mut rng);
        let mut s = HeomState::zeros(closed.layout());
        s.root_mut().copy_from_slice(w.values());
        let d = closed.rhs(&s).unwrap();
        let want = liouvillian(closed.grid(), closed.tables(), &w);
        assert!(d.root().iter().zip(want.values()).all(|(a, b)| (a - b).abs() < 1e-13));
    }

    #[test]
    fn fused_rhs_matches_operator_composition() {
        let ring = RingSpec { flux: 0.3, potential: Potential::from_series([(1, 0.2, -0.1), (3, 0.05, 0.0)]), ..RingSpec::default() };
        for strict in [false, true] {
            let gen = setup(&ring, &bath(0.8, 0.3, 2), 3, strict);
            let (g, t, h) = (gen.grid(), gen.tables(), gen.hierarchy());
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let mut state = HeomState::zeros(gen.layout());
            for v in state.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let got = gen.rhs(&state).unwrap();
            let field = |id: usize| Field::from_values(g, state.ado(id).to_vec()).unwrap();
            for id in 0..h.len() {
                let w = field(id);
                let mut want = liouvillian(g, t, &w).lincomb(1.0, &w, -gen.decay()[id]);
                for slot in 0..h.width() {
                    let (axis, j) = h.mode_of_slot(slot);
                    if let Some(p) = h.plus(id, slot) {
                        want = want.lincomb(1.0, &phi(g, t, axis, &field(p)), 1.0);
                    }
                    let n = h.components(id)[slot] as f64;
                    if let Some(q) = h.minus(id, slot) {
                        let term = if j == 0 { theta0(g, t, axis, &field(q), strict) } else { thetaj(g, t, axis, j, &field(q)).unwrap() };
                        want = want.lincomb(1.0, &term, n);
                    }
                }
                let err = got.ado(id).iter().zip(want.values()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                assert!(err < 1e-12, "id {id}: {err}");
            }
        }
    }

    #[test]
    fn mismatched_hierarchy_rejected() {
        let grid = PhaseSpaceGrid::new(5, 8, 1.0).unwrap();
        let tables = GeneratorTables::new(&grid, &RingSpec::default(), &bath(0.1, 0.1, 2), false).unwrap();
        let h = Arc::new(HierarchyIndexSet::enumerate(1, 2, 2));
        assert!(matches!(HeomGenerator::new(grid, h, tables, Workers::serial()), Err(GeneratorError::HierarchyMismatch { .. })));
    }

    #[test]
    fn non_finite_output_is_reported() {
        let gen = setup(&RingSpec::default(), &bath(0.1, 0.1, 0), 1, false);
        let mut s = HeomState::zeros(gen.layout());
        s.root_mut()[3] = f64::NAN;
        assert!(matches!(gen.rhs(&s), Err(PropagationError::NonFinite)));
    }
}
