//! Physical quantities extracted from hierarchy states: angle distribution,
//! expectation values, the dipole response function and its spectrum.

use crate::generator::HeomGenerator;
use crate::grid::{Field, PhaseSpaceGrid};
use crate::propagator::{HeomState, Observer, PropagationError, Propagator};

/// `P(θ_m) = (ħ/2) Σ_n W_root(p_n, θ_m)`.
pub fn pdf(grid: &PhaseSpaceGrid, state: &HeomState) -> Vec<f64> {
    let m = grid.cols();
    let mut p = vec![0.0; m];
    for row in state.root().chunks_exact(m) {
        for (acc, w) in p.iter_mut().zip(row) {
            *acc += w;
        }
    }
    let half = grid.hbar() / 2.0;
    p.iter_mut().for_each(|v| *v *= half);
    p
}

/// Peak-to-trough spread `max P - min P`.
pub fn pdf_amplitude(p: &[f64]) -> f64 {
    let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

fn weighted(grid: &PhaseSpaceGrid, root: &[f64], row_weight: impl Fn(usize) -> f64, col_weight: &[f64]) -> f64 {
    let m = grid.cols();
    let mut total = 0.0;
    for (r, row) in root.chunks_exact(m).enumerate() {
        let s: f64 = row.iter().zip(col_weight).map(|(w, c)| w * c).sum();
        total += row_weight(r) * s;
    }
    grid.cell_weight() * total
}

pub fn expect_costheta(grid: &PhaseSpaceGrid, state: &HeomState) -> f64 {
    costheta_of_root(grid, state.root())
}

pub fn costheta_of_root(grid: &PhaseSpaceGrid, root: &[f64]) -> f64 {
    weighted(grid, root, |_| 1.0, grid.cos_theta())
}

pub fn expect_momentum(grid: &PhaseSpaceGrid, state: &HeomState) -> f64 {
    let ones = vec![1.0; grid.cols()];
    weighted(grid, state.root(), |r| grid.momentum(r), &ones)
}

/// Wigner function of a density matrix given as `(m, m', Re ρ, Im ρ)`
/// entries in the angular-momentum basis:
/// `W(p_n, θ) = (1/πħ) Σ_{m+m'=n} ρ_{mm'} e^{i(m-m')θ}`.
/// Missing entries are zero; the caller supplies both `ρ_{mm'}` and `ρ_{m'm}`.
pub fn wigner_from_density_matrix(grid: &PhaseSpaceGrid, rho: &[(i64, i64, f64, f64)]) -> Field {
    let pref = 1.0 / (std::f64::consts::PI * grid.hbar());
    Field::from_fn(grid, |n, th| {
        rho.iter()
            .filter(|e| e.0 + e.1 == n)
            .map(|&(a, b, re, im)| {
                let phase = (a - b) as f64 * th;
                re * phase.cos() - im * phase.sin()
            })
            .sum::<f64>()
            * pref
    })
}

/// Replaces every auxiliary function by `sin θ · δW/δp_n`, the Wigner form
/// of `(i/ħ)[cos θ, ·]`.
pub fn apply_dipole_commutator(grid: &PhaseSpaceGrid, state: &HeomState) -> HeomState {
    let mut out = state.clone();
    let (m, cells) = (grid.cols(), grid.cells());
    let sin = grid.sin_theta();
    for (src, dst) in state.data().chunks_exact(cells).zip(out.data_mut().chunks_exact_mut(cells)) {
        grid.dpn_into(src, dst);
        for row in dst.chunks_exact_mut(m) {
            for (v, s) in row.iter_mut().zip(sin) {
                *v *= s;
            }
        }
    }
    out
}

/// Uniformly sampled linear response function.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ResponseSeries {
    pub fn spacing(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Records `⟨cos θ⟩` at uniform sample times, evaluating cubic Hermite
/// interpolants between accepted steps.
struct CosSampler<'a> {
    grid: &'a PhaseSpaceGrid,
    dt_sample: f64,
    count: usize,
    prev: Option<(f64, f64, f64)>,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Observer for CosSampler<'_> {
    fn observe(&mut self, t: f64, y: &[f64], dydt: &[f64]) -> Result<(), PropagationError> {
        let cells = self.grid.cells();
        let c = costheta_of_root(self.grid, &y[..cells]);
        let dc = costheta_of_root(self.grid, &dydt[..cells]);
        while self.times.len() < self.count {
            let s = self.times.len() as f64 * self.dt_sample;
            let v = match self.prev {
                _ if s == t => c,
                Some((t0, c0, d0)) if s >= t0 && s < t => hermite(t0, c0, d0, t, c, dc, s),
                _ => break,
            };
            self.times.push(s);
            self.values.push(v);
        }
        self.prev = Some((t, c, dc));
        Ok(())
    }
}

fn hermite(t0: f64, y0: f64, d0: f64, t1: f64, y1: f64, d1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * d1
}

/// Kicks an equilibrium state with the dipole commutator, propagates to
/// `t_max` and records `R(t) = ⟨cos θ⟩(t)` every `dt_sample`.
pub fn response_function(
    prop: &mut Propagator,
    generator: &HeomGenerator,
    equilibrium: &HeomState,
    t_max: f64,
    dt_sample: f64,
) -> Result<ResponseSeries, PropagationError> {
    if !(dt_sample > 0.0 && t_max >= 0.0) {
        return Err(PropagationError::InvalidControl("response needs dt_sample > 0 and t_max >= 0".into()));
    }
    let grid = generator.grid();
    let mut state = apply_dipole_commutator(grid, equilibrium);
    state.t = 0.0;
    state.dt = 0.0;
    let count = (t_max / dt_sample + 1e-9).floor() as usize + 1;
    let t_end = (count - 1) as f64 * dt_sample;
    let mut sampler =
        CosSampler { grid, dt_sample, count, prev: None, times: Vec::with_capacity(count), values: Vec::with_capacity(count) };
    if t_end == 0.0 {
        sampler.times.push(0.0);
        sampler.values.push(expect_costheta(grid, &state));
    } else {
        prop.propagate(generator, &mut state, t_end, Some(&mut sampler))?;
    }
    Ok(ResponseSeries { times: sampler.times, values: sampler.values })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub omegas: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// `σ(ω) = Im Σ_k w_k e^{iωt_k} e^{-λ t_k} R(t_k) Δt` with trapezoidal
/// end weights.
pub fn spectrum(series: &ResponseSeries, omegas: &[f64], damping: f64) -> Spectrum {
    let dt = series.spacing();
    let n = series.values.len();
    let sigma = omegas
        .iter()
        .map(|&w| {
            series
                .times
                .iter()
                .zip(&series.values)
                .enumerate()
                .map(|(k, (&t, &r))| {
                    let wk = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
                    wk * (w * t).sin() * (-damping * t).exp() * r
                })
                .sum::<f64>()
                * dt
        })
        .collect();
    Spectrum { omegas: omegas.to_vec(), sigma }
}

/// `n` evenly spaced frequencies from `start` to `stop` inclusive.
pub fn omega_grid(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl Spectrum {
    /// Indices of strict interior local maxima with positive σ, ascending in ω.
    pub fn local_maxima(&self) -> Vec<usize> {
        let s = &self.sigma;
        (1..s.len().saturating_sub(1)).filter(|&i| s[i] > 0.0 && s[i] > s[i - 1] && s[i] >= s[i + 1]).collect()
    }

    /// Maxima whose height is at least `fraction` of the tallest one.
    pub fn prominent_maxima(&self, fraction: f64) -> Vec<usize> {
        let peaks = self.local_maxima();
        let top = peaks.iter().map(|&i| self.sigma[i]).fold(0.0, f64::max);
        peaks.into_iter().filter(|&i| self.sigma[i] >= fraction * top).collect()
    }

    /// Full width at half maximum around the maximum at `i`, by linear
    /// interpolation; `None` if σ never drops to half on both sides.
    pub fn full_width_half_max(&self, i: usize) -> Option<f64> {
        let (w, s) = (&self.omegas, &self.sigma);
        let half = s[i] / 2.0;
        let mut left = None;
        for k in (0..i).rev() {
            if s[k] <= half {
                left = Some(w[k] + (half - s[k]) / (s[k + 1] - s[k]) * (w[k + 1] - w[k]));
                break;
            }
        }
        let mut right = None;
        for k in i + 1..s.len() {
            if s[k] <= half {
                right = Some(w[k - 1] + (s[k - 1] - half) / (s[k - 1] - s[k]) * (w[k] - w[k - 1]));
                break;
            }
        }
        Some(right? - left?)
    }
}
