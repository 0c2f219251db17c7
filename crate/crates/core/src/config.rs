//! TOML run configuration.
//!
//! ```toml
//! [ring]            # mass, radius, charge, flux, hbar
//! [potential]       # cos1, sin1, cos2, ... amplitudes of U(θ)
//! [bath]            # eta_x, eta_y (required); gamma_x, gamma_y, k_x, k_y, beta
//! [hierarchy]       # n_max, memory_budget_mb
//! [grid]            # n_p, m
//! [stepping]        # tol, safety, growth_cap, dt_min, dt_max, dt_init
//! [equilibrium]     # window, eps_ss, t_max
//! [response]        # t_max, dt_sample, omega_min, omega_max, omega_points, damping
//! [flux_scan]       # fluxes
//! [run]             # output, strict_paper_form, workers
//! ```
//!
//! Every section except `[bath]` is optional and every key other than the
//! two coupling strengths has a default. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generator::{Potential, RingSpec};
use crate::grid::PhaseSpaceGrid;
use crate::pade::{hierarchy_coefficients, Axis, BathSpec};
use crate::propagator::{SteadyState, StepControl};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}{key}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Validation { line: Option<usize>, key: String, message: String },
}

impl ConfigError {
    pub fn is_parse(&self) -> bool {
        matches!(self, Self::Parse { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RingSection {
    mass: f64,
    radius: f64,
    charge: f64,
    flux: f64,
    hbar: f64,
}

impl Default for RingSection {
    fn default() -> Self {
        let r = RingSpec::default();
        Self { mass: r.mass, radius: r.radius, charge: r.charge, flux: r.flux, hbar: r.hbar }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BathSection {
    eta_x: f64,
    eta_y: f64,
    #[serde(default = "one")]
    gamma_x: f64,
    #[serde(default = "one")]
    gamma_y: f64,
    #[serde(default = "two")]
    k_x: usize,
    #[serde(default = "two")]
    k_y: usize,
    #[serde(default = "one")]
    beta: f64,
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    pub n_max: usize,
    /// Upper bound on the memory taken by all propagation buffers.
    pub memory_budget_mb: u64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self { n_max: 4, memory_budget_mb: 4096 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_p: usize,
    pub m: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_p: 64, m: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SteppingSection {
    tol: f64,
    safety: f64,
    growth_cap: f64,
    dt_min: f64,
    dt_max: f64,
    dt_init: f64,
}

impl Default for SteppingSection {
    fn default() -> Self {
        let c = StepControl::default();
        Self { tol: c.tol, safety: c.safety, growth_cap: c.growth_cap, dt_min: c.dt_min, dt_max: c.dt_max, dt_init: c.dt_init }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EquilibriumSection {
    window: f64,
    eps_ss: f64,
    t_max: f64,
}

impl Default for EquilibriumSection {
    fn default() -> Self {
        let s = SteadyState::default();
        Self { window: s.window, eps_ss: s.eps_ss, t_max: s.t_max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseConfig {
    pub t_max: f64,
    pub dt_sample: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub omega_points: usize,
    pub damping: f64,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        Self { t_max: 100.0, dt_sample: 0.05, omega_min: 0.0, omega_max: 6.0, omega_points: 601, damping: 0.0 }
    }
}

impl ResponseConfig {
    pub fn omegas(&self) -> Vec<f64> {
        crate::observables::omega_grid(self.omega_min, self.omega_max, self.omega_points)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluxScanConfig {
    pub fluxes: Vec<f64>,
}

impl Default for FluxScanConfig {
    fn default() -> Self {
        Self { fluxes: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub output: PathBuf,
    pub strict_paper_form: bool,
    /// `0` uses every available core.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { output: PathBuf::from("qhfpe-out"), strict_paper_form: false, workers: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    ring: RingSection,
    #[serde(default)]
    potential: BTreeMap<String, f64>,
    bath: BathSection,
    #[serde(default)]
    hierarchy: HierarchyConfig,
    #[serde(default)]
    grid: GridConfig,
    #[serde(default)]
    stepping: SteppingSection,
    #[serde(default)]
    equilibrium: EquilibriumSection,
    #[serde(default)]
    response: ResponseConfig,
    #[serde(default)]
    flux_scan: FluxScanConfig,
    #[serde(default)]
    run: RunOptions,
}

/// A fully validated run description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub ring: RingSpec,
    pub bath: BathSpec,
    pub hierarchy: HierarchyConfig,
    pub grid: GridConfig,
    pub stepping: StepControl,
    pub equilibrium: SteadyState,
    pub response: ResponseConfig,
    pub flux_scan: FluxScanConfig,
    pub run: RunOptions,
    hash: String,
}

impl RunConfig {
    /// SHA-256 over every setting that can change numerical output; the
    /// output directory and worker count are excluded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn build_grid(&self) -> PhaseSpaceGrid {
        PhaseSpaceGrid::new(self.grid.n_p, self.grid.m, self.ring.hbar).expect("validated grid")
    }

    /// Re-derives the hash after programmatic edits.
    pub fn rehash(&mut self) {
        self.hash = compute_hash(self);
    }

    /// One-line summary for CSV headers.
    pub fn describe(&self) -> String {
        format!(
            "config={} flux={} beta={} eta_x={} eta_y={} gamma_x={} gamma_y={} k_x={} k_y={} n_max={} n_p={} m={} tol={:e} strict={}",
            self.hash,
            self.ring.flux,
            self.bath.beta,
            self.bath.eta_x,
            self.bath.eta_y,
            self.bath.gamma_x,
            self.bath.gamma_y,
            self.bath.k_x,
            self.bath.k_y,
            self.hierarchy.n_max,
            self.grid.n_p,
            self.grid.m,
            self.stepping.tol,
            self.run.strict_paper_form
        )
    }
}

fn compute_hash(c: &RunConfig) -> String {
    let text = format!(
        "{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{}",
        c.ring, c.bath, c.hierarchy, c.grid, c.stepping, c.equilibrium, c.response, c.flux_scan, c.run.strict_paper_form
    );
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line of `key = ...` inside `[section]`, if present.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                section_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    section_line
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(1),
        message: e.message().trim().to_string(),
    })?;
    let invalid = |section: &str, key: &str, message: String| ConfigError::Validation {
        line: locate(text, section, key),
        key: format!("{section}.{key}"),
        message,
    };

    let mut terms = Vec::new();
    for (key, &value) in &raw.potential {
        let parsed = key
            .strip_prefix("cos")
            .map(|k| (k, true))
            .or_else(|| key.strip_prefix("sin").map(|k| (k, false)))
            .and_then(|(k, is_cos)| k.parse::<u32>().ok().filter(|&k| k > 0).map(|k| (k, is_cos)));
        let (k, is_cos) = parsed.ok_or_else(|| invalid("potential", key, "expected cosK or sinK with K >= 1".into()))?;
        if !value.is_finite() {
            return Err(invalid("potential", key, "must be finite".into()));
        }
        terms.push(if is_cos { (k, value, 0.0) } else { (k, 0.0, value) });
    }
    let mut merged: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for (k, c, s) in terms {
        let e = merged.entry(k).or_default();
        e.0 += c;
        e.1 += s;
    }

    let r = &raw.ring;
    let ring = RingSpec {
        mass: r.mass,
        radius: r.radius,
        charge: r.charge,
        flux: r.flux,
        hbar: r.hbar,
        potential: Potential::from_series(merged.into_iter().map(|(k, (c, s))| (k, c, s))),
    };
    for (key, v) in [("mass", r.mass), ("radius", r.radius), ("hbar", r.hbar)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid("ring", key, format!("must be positive and finite, got {v}")));
        }
    }
    if !(r.charge.is_finite() && r.charge != 0.0) {
        return Err(invalid("ring", "charge", format!("must be nonzero and finite, got {}", r.charge)));
    }
    if !r.flux.is_finite() {
        return Err(invalid("ring", "flux", "must be finite".into()));
    }

    let b = &raw.bath;
    let bath = BathSpec { eta_x: b.eta_x, eta_y: b.eta_y, gamma_x: b.gamma_x, gamma_y: b.gamma_y, k_x: b.k_x, k_y: b.k_y, beta: b.beta };
    for (key, v) in [("eta_x", b.eta_x), ("eta_y", b.eta_y)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid("bath", key, format!("must be non-negative and finite, got {v}")));
        }
    }
    for (key, v) in [("gamma_x", b.gamma_x), ("gamma_y", b.gamma_y), ("beta", b.beta)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid("bath", key, format!("must be positive and finite, got {v}")));
        }
    }
    for axis in Axis::BOTH {
        if let Err(e) = hierarchy_coefficients(&bath, axis, ring.radius, ring.hbar) {
            let key = if axis == Axis::X { "k_x" } else { "k_y" };
            return Err(invalid("bath", key, e.to_string()));
        }
    }

    if raw.grid.m < 8 || raw.grid.m % 2 != 0 {
        return Err(invalid("grid", "m", format!("must be even and at least 8, got {}", raw.grid.m)));
    }
    if raw.grid.n_p < 2 {
        return Err(invalid("grid", "n_p", format!("must be at least 2, got {}", raw.grid.n_p)));
    }
    if raw.hierarchy.memory_budget_mb == 0 {
        return Err(invalid("hierarchy", "memory_budget_mb", "must be positive".into()));
    }

    let s = &raw.stepping;
    let stepping =
        StepControl { tol: s.tol, safety: s.safety, growth_cap: s.growth_cap, dt_min: s.dt_min, dt_max: s.dt_max, dt_init: s.dt_init };
    if let Err(e) = stepping.validate() {
        let key = if !(s.tol > 0.0 && s.tol.is_finite()) {
            "tol"
        } else if !(s.safety > 0.0 && s.safety < 1.0) {
            "safety"
        } else if !(s.growth_cap > 1.0 && s.growth_cap.is_finite()) {
            "growth_cap"
        } else if !(s.dt_min > 0.0 && s.dt_min < s.dt_max && s.dt_max.is_finite()) {
            "dt_min"
        } else {
            "dt_init"
        };
        return Err(invalid("stepping", key, e.to_string()));
    }

    let e = &raw.equilibrium;
    for (key, v) in [("window", e.window), ("eps_ss", e.eps_ss), ("t_max", e.t_max)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid("equilibrium", key, format!("must be positive and finite, got {v}")));
        }
    }

    let resp = &raw.response;
    for (key, v) in [("t_max", resp.t_max), ("dt_sample", resp.dt_sample)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid("response", key, format!("must be positive and finite, got {v}")));
        }
    }
    if resp.dt_sample > resp.t_max {
        return Err(invalid("response", "dt_sample", "must not exceed t_max".into()));
    }
    if !(resp.damping >= 0.0 && resp.damping.is_finite()) {
        return Err(invalid("response", "damping", "must be non-negative and finite".into()));
    }
    if !(resp.omega_min.is_finite() && resp.omega_max.is_finite() && resp.omega_max > resp.omega_min) {
        return Err(invalid("response", "omega_max", "must exceed omega_min".into()));
    }
    if resp.omega_points < 2 {
        return Err(invalid("response", "omega_points", "need at least 2 points".into()));
    }
    if raw.flux_scan.fluxes.iter().any(|f| !f.is_finite()) {
        return Err(invalid("flux_scan", "fluxes", "must be finite".into()));
    }

    let mut config = RunConfig {
        ring,
        bath,
        hierarchy: raw.hierarchy,
        grid: raw.grid,
        stepping,
        equilibrium: SteadyState { window: e.window, eps_ss: e.eps_ss, t_max: e.t_max },
        response: raw.response,
        flux_scan: raw.flux_scan,
        run: raw.run,
        hash: String::new(),
    };
    config.rehash();
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[bath]\neta_x = 0.02\neta_y = 0.01\n";

    #[test]
    fn minimal_file_gets_documented_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.ring.mass, 0.5);
        assert_eq!(c.ring.radius, 1.0);
        assert_eq!(c.ring.charge, -1.0);
        assert_eq!(c.ring.flux, 0.0);
        assert_eq!(c.bath.beta, 1.0);
        assert_eq!(c.bath.gamma_x, 1.0);
        assert_eq!(c.bath.gamma_y, 1.0);
        assert_eq!(c.stepping.tol, 1e-10);
        assert_eq!(c.stepping.safety, 0.99);
        assert_eq!((c.grid.n_p, c.grid.m), (64, 64));
        assert!(!c.run.strict_paper_form);
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn missing_required_key_names_it() {
        let err = parse_config("[bath]\neta_x = 1.0\n").unwrap_err();
        assert!(err.is_parse());
        assert!(err.to_string().contains("eta_y"), "{err}");
        let err = parse_config("[ring]\nflux = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("bath"), "{err}");
    }

    #[test]
    fn unknown_key_is_a_parse_error_with_line() {
        let err = parse_config("[bath]\neta_x = 1.0\neta_y = 1.0\n\n[ring]\nfluxx = 0.5\n").unwrap_err();
        match err {
            ConfigError::Parse { line, message } => {
                assert_eq!(line, 6);
                assert!(message.contains("fluxx"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let err = parse_config("[bath]\neta_x = \"strong\"\neta_y = 1.0\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn asymmetric_pade_counts_are_accepted() {
        let c = parse_config("[bath]\neta_x = 1.0\neta_y = 0.5\nk_x = 2\nk_y = 4\n").unwrap();
        assert_eq!((c.bath.k_x, c.bath.k_y), (2, 4));
    }

    #[test]
    fn validation_errors_point_at_the_key() {
        let cases = [
            ("[bath]\neta_x = 1.0\neta_y = -1.0\n", 3, "bath.eta_y"),
            ("[bath]\neta_x = 1.0\neta_y = 1.0\n[grid]\nm = 7\n", 5, "grid.m"),
            ("[bath]\neta_x = 1.0\neta_y = 1.0\n[stepping]\nsafety = 1.5\n", 5, "stepping.safety"),
            ("[ring]\nmass = 0.0\n[bath]\neta_x = 1.0\neta_y = 1.0\n", 2, "ring.mass"),
            ("[bath]\neta_x = 1.0\neta_y = 1.0\nbeta = 0.0\n", 4, "bath.beta"),
            ("[bath]\neta_x = 1.0\neta_y = 1.0\n[potential]\ntan2 = 0.1\n", 5, "potential.tan2"),
        ];
        for (text, want_line, want_key) in cases {
            match parse_config(text).unwrap_err() {
                ConfigError::Validation { line, key, .. } => {
                    assert_eq!(line, Some(want_line), "{text}");
                    assert_eq!(key, want_key);
                }
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn potential_keys() {
        let c = parse_config("[bath]\neta_x = 1.0\neta_y = 1.0\n[potential]\ncos2 = 0.1\nsin2 = -0.2\nsin1 = 0.3\n").unwrap();
        assert_eq!(c.ring.potential.terms(), &[(1, 0.0, 0.3), (2, 0.1, -0.2)]);
    }

    #[test]
    fn hash_tracks_physics_not_output_location() {
        let a = parse_config(MINIMAL).unwrap();
        let b = parse_config(&format!("{MINIMAL}[run]\noutput = \"elsewhere\"\nworkers = 3\n")).unwrap();
        let c = parse_config(&format!("{MINIMAL}[ring]\nflux = 0.25\n")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash(), parse_config(MINIMAL).unwrap().hash());
        assert!(a.describe().starts_with(&format!("config={}", a.hash())));
    }
}
