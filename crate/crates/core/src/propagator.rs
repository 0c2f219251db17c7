//! Adaptive Runge-Kutta-Fehlberg 4(5) propagation and the steady-state
//! relaxation driver.

use std::time::Instant;

use thiserror::Error;

use crate::generator::{HeomGenerator, RingSpec};
use crate::grid::{Field, PhaseSpaceGrid};
use crate::parallel::{Workers, SERIAL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("state has {got} values, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("right-hand side produced a non-finite value")]
    NonFinite,
    #[error("step size underflow at t = {t}: rejected step would need dt = {dt:e}")]
    StepUnderflow { t: f64, dt: f64 },
    #[error("no steady state by t = {t}: field residual {field_residual:e}, cos drift {cos_drift:e}")]
    NoConvergence { t: f64, field_residual: f64, cos_drift: f64 },
    #[error("invalid step control: {0}")]
    InvalidControl(String),
    #[error("t_end = {t_end} lies before the current time {t}")]
    Backwards { t: f64, t_end: f64 },
    #[error("observer failed: {0}")]
    Observer(String),
}

/// A system `dy/dt = f(t, y)` over a flat real vector.
pub trait OdeSystem: Sync {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), PropagationError>;

    /// Components entering the step error estimate; `None` means all of them.
    fn error_components(&self) -> Option<&[usize]> {
        None
    }

    fn workers(&self) -> &Workers {
        &SERIAL
    }
}

/// Shape of a hierarchy state: `ados` blocks of `rows × cols` values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateLayout {
    pub ados: usize,
    pub rows: usize,
    pub cols: usize,
}

impl StateLayout {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.ados * self.cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All auxiliary Wigner functions at one instant; ADO 0 is the physical one.
#[derive(Clone, Debug, PartialEq)]
pub struct HeomState {
    layout: StateLayout,
    pub t: f64,
    /// Step size proposed for the next step; `0` picks the control default.
    pub dt: f64,
    data: Vec<f64>,
}

impl HeomState {
    pub fn zeros(layout: StateLayout) -> Self {
        Self { layout, t: 0.0, dt: 0.0, data: vec![0.0; layout.len()] }
    }

    pub fn from_data(layout: StateLayout, t: f64, dt: f64, data: Vec<f64>) -> Result<Self, PropagationError> {
        if data.len() != layout.len() {
            return Err(PropagationError::Shape { expected: layout.len(), got: data.len() });
        }
        Ok(Self { layout, t, dt, data })
    }

    /// Root set to the normalized discrete Gaussian
    /// `exp(-β (p_n - ħΦ̄)² / 2I)` on even-`n` rows, uniform in θ.
    pub fn thermal_guess(grid: &PhaseSpaceGrid, ring: &RingSpec, beta: f64, ados: usize) -> Self {
        let mut state = Self::zeros(StateLayout { ados, rows: grid.rows(), cols: grid.cols() });
        let center = ring.hbar * ring.flux;
        let inertia = ring.inertia();
        let root = Field::from_fn(grid, |n, _| {
            if n % 2 == 0 {
                let d = n as f64 * grid.hbar() / 2.0 - center;
                (-beta * d * d / (2.0 * inertia)).exp()
            } else {
                0.0
            }
        });
        let norm = grid.integrate(&root);
        for (dst, v) in state.root_mut().iter_mut().zip(root.values()) {
            *dst = v / norm;
        }
        state
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn ado(&self, id: usize) -> &[f64] {
        let c = self.layout.cells();
        &self.data[id * c..(id + 1) * c]
    }

    pub fn ado_mut(&mut self, id: usize) -> &mut [f64] {
        let c = self.layout.cells();
        &mut self.data[id * c..(id + 1) * c]
    }

    pub fn root(&self) -> &[f64] {
        self.ado(0)
    }

    pub fn root_mut(&mut self) -> &mut [f64] {
        self.ado_mut(0)
    }

    pub fn root_field(&self, grid: &PhaseSpaceGrid) -> Field {
        Field::from_values(grid, self.root().to_vec()).expect("state layout matches grid")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepControl {
    pub tol: f64,
    pub safety: f64,
    pub growth_cap: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_init: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { tol: 1e-10, safety: 0.99, growth_cap: 5.0, dt_min: 1e-12, dt_max: 0.1, dt_init: 1e-4 }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<(), PropagationError> {
        let bad = |m: String| Err(PropagationError::InvalidControl(m));
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return bad(format!("safety must lie in (0, 1), got {}", self.safety));
        }
        if !(self.growth_cap > 1.0 && self.growth_cap.is_finite()) {
            return bad(format!("growth_cap must exceed 1, got {}", self.growth_cap));
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_max && self.dt_max.is_finite()) {
            return bad(format!("need 0 < dt_min < dt_max, got {} and {}", self.dt_min, self.dt_max));
        }
        if !(self.dt_init >= self.dt_min && self.dt_init <= self.dt_max) {
            return bad(format!("dt_init {} outside [dt_min, dt_max]", self.dt_init));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDecision {
    pub accept: bool,
    pub dt_new: f64,
}

/// `dt_new = (C·TOL/ε)^{1/5} dt`, clamped to `[dt_min, min(dt_max, growth_cap·dt)]`.
pub fn adapt_step(dt: f64, err: f64, control: &StepControl) -> Result<StepDecision, PropagationError> {
    let accept = err <= control.tol;
    let upper = control.dt_max.min(control.growth_cap * dt);
    let raw = if err == 0.0 { control.growth_cap * dt } else { (control.safety * control.tol / err).powf(0.2) * dt };
    if !accept && raw < control.dt_min {
        return Err(PropagationError::StepUnderflow { t: f64::NAN, dt: raw });
    }
    Ok(StepDecision { accept, dt_new: raw.min(upper).max(control.dt_min) })
}

/// `max_n |W⁴_root(p_n, 0) - W⁵_root(p_n, 0)|`.
pub fn estimate_error(state4: &HeomState, state5: &HeomState) -> f64 {
    assert_eq!(state4.layout, state5.layout, "estimate_error needs matching shapes");
    let m = state4.layout.cols;
    (0..state4.layout.rows).map(|r| (state4.data[r * m] - state5.data[r * m]).abs()).fold(0.0, f64::max)
}

// Fehlberg's 4(5) tableau.
const C: [f64; 6] = [0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5];
const A2: [f64; 1] = [0.25];
const A3: [f64; 2] = [3.0 / 32.0, 9.0 / 32.0];
const A4: [f64; 3] = [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0];
const A5: [f64; 4] = [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0];
const A6: [f64; 5] = [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0];
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2, 0.0];
const B5: [f64; 6] = [16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0];

/// Stages 2..6 given `k[0] = f(t, y)`.
fn stages<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    h: f64,
    k: &mut [Vec<f64>; 6],
    tmp: &mut [f64],
) -> Result<(), PropagationError> {
    let rows: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
    for (s, a) in rows.iter().enumerate() {
        let (done, rest) = k.split_at_mut(s + 1);
        let terms: Vec<(f64, &[f64])> = a.iter().zip(done.iter()).filter(|(c, _)| **c != 0.0).map(|(c, v)| (h * c, v.as_slice())).collect();
        sys.workers().combine(tmp, y, &terms);
        sys.rhs(t + C[s + 1] * h, tmp, &mut rest[0])?;
    }
    Ok(())
}

fn weights<'a>(b: &[f64; 6], h: f64, k: &'a [Vec<f64>; 6]) -> Vec<(f64, &'a [f64])> {
    b.iter().zip(k.iter()).filter(|(c, _)| **c != 0.0).map(|(c, v)| (h * c, v.as_slice())).collect()
}

/// One Fehlberg step from `(t, y)`; returns the embedded 4th- and 5th-order
/// solutions.
pub fn rkf_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>), PropagationError> {
    let n = sys.dim();
    if y.len() != n {
        return Err(PropagationError::Shape { expected: n, got: y.len() });
    }
    let mut k: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    sys.rhs(t, y, &mut k[0])?;
    stages(sys, t, y, dt, &mut k, &mut tmp)?;
    let mut y4 = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    sys.workers().combine(&mut y4, y, &weights(&B4, dt, &k));
    sys.workers().combine(&mut y5, y, &weights(&B5, dt, &k));
    Ok((y4, y5))
}

/// Receives `(t, y, dy/dt)` at the initial point and after each accepted step.
pub trait Observer {
    fn observe(&mut self, t: f64, y: &[f64], dydt: &[f64]) -> Result<(), PropagationError>;
}

impl<F: FnMut(f64, &[f64], &[f64]) -> Result<(), PropagationError>> Observer for F {
    fn observe(&mut self, t: f64, y: &[f64], dydt: &[f64]) -> Result<(), PropagationError> {
        self(t, y, dydt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub err: f64,
    pub accepted: bool,
    /// Wall-clock seconds spent on the step.
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PropagationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_calls: usize,
}

/// Reusable stepper with preallocated stage buffers.
#[derive(Debug)]
pub struct Propagator {
    control: StepControl,
    k: [Vec<f64>; 6],
    tmp: Vec<f64>,
    y5: Vec<f64>,
    log: Option<Vec<StepRecord>>,
    stats: PropagationStats,
}

impl Propagator {
    pub fn new(control: StepControl) -> Result<Self, PropagationError> {
        control.validate()?;
        Ok(Self {
            control,
            k: std::array::from_fn(|_| Vec::new()),
            tmp: Vec::new(),
            y5: Vec::new(),
            log: None,
            stats: PropagationStats::default(),
        })
    }

    pub fn control(&self) -> &StepControl {
        &self.control
    }

    /// Starts recording every attempted step.
    pub fn record_steps(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn step_log(&self) -> &[StepRecord] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn take_step_log(&mut self) -> Vec<StepRecord> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Totals since construction.
    pub fn stats(&self) -> PropagationStats {
        self.stats
    }

    fn ensure_buffers(&mut self, n: usize) {
        if self.tmp.len() != n {
            for k in &mut self.k {
                *k = vec![0.0; n];
            }
            self.tmp = vec![0.0; n];
            self.y5 = vec![0.0; n];
        }
    }

    pub fn propagate<S: OdeSystem + ?Sized>(
        &mut self,
        sys: &S,
        state: &mut HeomState,
        t_end: f64,
        observer: Option<&mut dyn Observer>,
    ) -> Result<PropagationStats, PropagationError> {
        let (mut t, mut dt) = (state.t, state.dt);
        let out = self.propagate_slice(sys, &mut t, &mut dt, &mut state.data, t_end, observer);
        state.t = t;
        state.dt = dt;
        out
    }

    /// Advances `y` from `*t` to exactly `t_end`; `*dt` carries the step
    /// proposal in and out.
    pub fn propagate_slice<S: OdeSystem + ?Sized>(
        &mut self,
        sys: &S,
        t: &mut f64,
        dt: &mut f64,
        y: &mut [f64],
        t_end: f64,
        mut observer: Option<&mut dyn Observer>,
    ) -> Result<PropagationStats, PropagationError> {
        let n = sys.dim();
        if y.len() != n {
            return Err(PropagationError::Shape { expected: n, got: y.len() });
        }
        if t_end < *t {
            return Err(PropagationError::Backwards { t: *t, t_end });
        }
        let mut stats = PropagationStats::default();
        if t_end == *t {
            return Ok(stats);
        }
        self.ensure_buffers(n);
        let ctl = self.control.clone();
        if !(*dt > 0.0) {
            *dt = ctl.dt_init;
        }
        *dt = dt.clamp(ctl.dt_min, ctl.dt_max);

        sys.rhs(*t, y, &mut self.k[0])?;
        stats.rhs_calls += 1;
        if let Some(obs) = observer.as_deref_mut() {
            obs.observe(*t, y, &self.k[0])?;
        }
        let diff: [f64; 6] = std::array::from_fn(|i| B4[i] - B5[i]);

        while *t < t_end {
            let started = Instant::now();
            let remaining = t_end - *t;
            let last = *dt >= remaining || remaining - *dt < ctl.dt_min;
            let h = if last { remaining } else { *dt };

            stages(sys, *t, y, h, &mut self.k, &mut self.tmp)?;
            stats.rhs_calls += 5;
            let err = {
                let k = &self.k;
                let one = |i: usize| (h * diff.iter().zip(k.iter()).map(|(d, v)| d * v[i]).sum::<f64>()).abs();
                match sys.error_components() {
                    Some(idx) => idx.iter().map(|&i| one(i)).fold(0.0, f64::max),
                    None => (0..n).map(one).fold(0.0, f64::max),
                }
            };
            let decision = adapt_step(h, err, &ctl).map_err(|e| match e {
                PropagationError::StepUnderflow { dt, .. } => PropagationError::StepUnderflow { t: *t, dt },
                other => other,
            })?;
            if let Some(log) = &mut self.log {
                log.push(StepRecord { t: *t, dt: h, err, accepted: decision.accept, seconds: started.elapsed().as_secs_f64() });
            }
            if !decision.accept {
                stats.rejected += 1;
                *dt = decision.dt_new;
                continue;
            }
            stats.accepted += 1;
            sys.workers().combine(&mut self.y5, y, &weights(&B5, h, &self.k));
            y.copy_from_slice(&self.y5);
            *t = if last { t_end } else { *t + h };
            // A shortened final step says little about the natural step size.
            if !(last && h < *dt) {
                *dt = decision.dt_new;
            }
            if *t < t_end || observer.is_some() {
                sys.rhs(*t, y, &mut self.k[0])?;
                stats.rhs_calls += 1;
            }
            if let Some(obs) = observer.as_deref_mut() {
                obs.observe(*t, y, &self.k[0])?;
            }
        }
        self.stats.accepted += stats.accepted;
        self.stats.rejected += stats.rejected;
        self.stats.rhs_calls += stats.rhs_calls;
        Ok(stats)
    }
}

/// Stopping rule for the relaxation driver.
#[derive(Clone, Debug, PartialEq)]
pub struct SteadyState {
    /// Window length τ between residual checks.
    pub window: f64,
    pub eps_ss: f64,
    pub t_max: f64,
}

impl Default for SteadyState {
    fn default() -> Self {
        Self { window: 1.0, eps_ss: 1e-9, t_max: 500.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxReport {
    pub t: f64,
    pub windows: usize,
    /// `max |W_root(t+τ) - W_root(t)| / τ` over the last window.
    pub field_residual: f64,
    /// `|⟨cos θ⟩(t+τ) - ⟨cos θ⟩(t)| / τ` over the last window.
    pub cos_drift: f64,
}

fn root_cos(grid: &PhaseSpaceGrid, root: &[f64]) -> f64 {
    let m = grid.cols();
    let cos = grid.cos_theta();
    grid.cell_weight() * root.chunks_exact(m).map(|row| row.iter().zip(cos).map(|(w, c)| w * c).sum::<f64>()).sum::<f64>()
}

/// Propagates in windows of length τ until both the root field and
/// `⟨cos θ⟩` stop moving. An exactly stationary input returns at once.
pub fn relax_to_equilibrium(
    prop: &mut Propagator,
    generator: &HeomGenerator,
    state: &mut HeomState,
    criterion: &SteadyState,
    mut progress: impl FnMut(&RelaxReport),
) -> Result<RelaxReport, PropagationError> {
    if !(criterion.window > 0.0 && criterion.eps_ss > 0.0 && criterion.t_max > 0.0) {
        return Err(PropagationError::InvalidControl("steady-state window, eps_ss and t_max must be positive".into()));
    }
    let grid = generator.grid();
    let cells = grid.cells();

    let rate = generator.rhs(state)?;
    let mut report = RelaxReport {
        t: state.t,
        windows: 0,
        // Every auxiliary function must be still: the root alone is at rest
        // in the thermal guess before the bath has built any memory.
        field_residual: rate.data.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        cos_drift: root_cos(grid, rate.root()).abs(),
    };
    if report.field_residual < criterion.eps_ss && report.cos_drift < criterion.eps_ss {
        return Ok(report);
    }

    let t_stop = state.t + criterion.t_max;
    let mut previous = state.root().to_vec();
    let mut cos_prev = root_cos(grid, &previous);
    while state.t < t_stop {
        let start = state.t;
        let target = (start + criterion.window).min(t_stop);
        prop.propagate(generator, state, target, None)?;
        let tau = state.t - start;
        let root = &state.data[..cells];
        report.field_residual = root.iter().zip(&previous).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / tau;
        let cos_now = root_cos(grid, root);
        report.cos_drift = (cos_now - cos_prev).abs() / tau;
        report.t = state.t;
        report.windows += 1;
        progress(&report);
        if report.field_residual < criterion.eps_ss && report.cos_drift < criterion.eps_ss {
            return Ok(report);
        }
        previous.copy_from_slice(root);
        cos_prev = cos_now;
    }
    Err(PropagationError::NoConvergence { t: state.t, field_residual: report.field_residual, cos_drift: report.cos_drift })
}
