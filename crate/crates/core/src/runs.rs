//! End-to-end experiments driven by a [`RunConfig`]: equilibrium
//! relaxation, linear response, flux scans and the Padé table.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::config::RunConfig;
use crate::generator::{GeneratorTables, HeomGenerator};
use crate::grid::PhaseSpaceGrid;
use crate::hierarchy::HierarchyIndexSet;
use crate::io::{load_checkpoint, save_checkpoint, write_field_csv, write_step_log, write_table_file, IoError};
use crate::observables::{expect_costheta, expect_momentum, pdf, pdf_amplitude, response_function, spectrum, ResponseSeries, Spectrum};
use crate::pade::{coth_surrogate_error, hierarchy_coefficients, symmetrized_correlation, Axis};
use crate::parallel::Workers;
use crate::propagator::{relax_to_equilibrium, HeomState, Propagator, RelaxReport, StepRecord};
use crate::Error;

/// Full-size vectors held during propagation: state, six stages, stage
/// input, fifth-order result and the previous relaxation window.
pub const STATE_COPIES: usize = 10;

/// Edge-row weight above which the momentum cutoff is reported as too small.
pub const BOUNDARY_TOLERANCE: f64 = 1e-10;

/// Everything needed to evaluate the hierarchy for one configuration.
pub struct Model {
    pub grid: PhaseSpaceGrid,
    pub generator: HeomGenerator,
}

impl Model {
    pub fn build(config: &RunConfig, workers: &Workers) -> Result<Self, Error> {
        let grid = config.build_grid();
        let budget = config.hierarchy.memory_budget_mb as u128 * (1 << 20);
        let hierarchy = HierarchyIndexSet::enumerate_within(
            config.bath.k_x,
            config.bath.k_y,
            config.hierarchy.n_max,
            grid.cells() * STATE_COPIES,
            budget,
        )?;
        let tables = GeneratorTables::new(&grid, &config.ring, &config.bath, config.run.strict_paper_form)?;
        let generator = HeomGenerator::new(grid.clone(), Arc::new(hierarchy), tables, workers.clone())?;
        Ok(Self { grid, generator })
    }
}

/// Largest `|W_root|` on the rows `n = ±Np` relative to the largest value overall.
pub fn boundary_ratio(grid: &PhaseSpaceGrid, state: &HeomState) -> f64 {
    let root = state.root();
    let m = grid.cols();
    let max = root.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max == 0.0 {
        return 0.0;
    }
    let last = grid.rows() - 1;
    let edge = root[..m].iter().chain(&root[last * m..]).fold(0.0f64, |a, v| a.max(v.abs()));
    edge / max
}

#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub state: HeomState,
    pub report: RelaxReport,
    pub convergence: Vec<RelaxReport>,
    pub steps: Vec<StepRecord>,
    pub pdf: Vec<f64>,
    pub cos_theta: f64,
    pub momentum: f64,
    pub amplitude: f64,
    pub boundary_ratio: f64,
    pub seconds: f64,
}

/// Relaxes the thermal guess to the steady state of `model`.
pub fn equilibrate(config: &RunConfig, model: &Model, log: &mut dyn FnMut(&str)) -> Result<Equilibrium, Error> {
    let started = Instant::now();
    let grid = &model.grid;
    let mut state = HeomState::thermal_guess(grid, &config.ring, config.bath.beta, model.generator.hierarchy().len());
    let mut prop = Propagator::new(config.stepping.clone())?;
    prop.record_steps();
    let mut convergence = Vec::new();
    let report = relax_to_equilibrium(&mut prop, &model.generator, &mut state, &config.equilibrium, |r| {
        convergence.push(*r);
        log(&format!("t = {:.3}: field residual {:.3e}, cos drift {:.3e}", r.t, r.field_residual, r.cos_drift));
    })?;
    let p = pdf(grid, &state);
    Ok(Equilibrium {
        cos_theta: expect_costheta(grid, &state),
        momentum: expect_momentum(grid, &state),
        amplitude: pdf_amplitude(&p),
        boundary_ratio: boundary_ratio(grid, &state),
        pdf: p,
        report,
        convergence,
        steps: prop.take_step_log(),
        state,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Files written and diagnostics gathered by a run.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub lines: Vec<String>,
}

fn prepare_output(dir: &Path) -> Result<(), Error> {
    if dir.as_os_str().is_empty() {
        return Err(IoError::EmptyPath.into());
    }
    fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    let mut f = fs::File::create(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    f.write_all(text.as_bytes()).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

/// Timing and step sizes go to a plain log so the CSVs stay reproducible.
fn step_log_text(steps: &[StepRecord], seconds: f64) -> String {
    let mut s = String::new();
    let accepted = steps.iter().filter(|r| r.accepted).count();
    let _ = writeln!(s, "steps accepted {accepted} rejected {} wall {seconds:.3}s", steps.len() - accepted);
    for r in steps {
        let _ = writeln!(s, "t {:e} dt {:e} err {:e} {} {:.6}s", r.t, r.dt, r.err, if r.accepted { "accept" } else { "reject" }, r.seconds);
    }
    s
}

fn check_boundary(eq: &Equilibrium, config: &RunConfig, summary: &mut RunSummary) {
    if eq.boundary_ratio > BOUNDARY_TOLERANCE {
        summary.warnings.push(format!(
            "momentum cutoff n_p = {} is tight: edge rows hold {:.2e} of the peak value (want < {:e})",
            config.grid.n_p, eq.boundary_ratio, BOUNDARY_TOLERANCE
        ));
    }
}

fn write_equilibrium_files(config: &RunConfig, model: &Model, eq: &Equilibrium, dir: &Path, summary: &mut RunSummary) -> Result<(), Error> {
    let meta = config.describe();
    let grid = &model.grid;

    let pdf_path = dir.join("pdf.csv");
    write_table_file(&pdf_path, &["theta", "P"], &meta, grid.theta().iter().zip(&eq.pdf).map(|(t, p)| vec![*t, *p]))?;
    summary.files.push(pdf_path);

    let wigner_path = dir.join("wigner.csv");
    let file = fs::File::create(&wigner_path).map_err(|source| IoError::Io { path: wigner_path.clone(), source })?;
    write_field_csv(std::io::BufWriter::new(file), grid, &eq.state.root_field(grid), &meta)
        .map_err(|source| IoError::Io { path: wigner_path.clone(), source })?;
    summary.files.push(wigner_path);

    let conv_path = dir.join("convergence.csv");
    write_table_file(
        &conv_path,
        &["t", "field_residual", "cos_drift"],
        &meta,
        eq.convergence.iter().map(|r| vec![r.t, r.field_residual, r.cos_drift]),
    )?;
    summary.files.push(conv_path);

    let state_path = dir.join("state.bin");
    save_checkpoint(&state_path, &eq.state)?;
    summary.files.push(state_path);

    let steps_path = dir.join("steps.csv");
    let file = fs::File::create(&steps_path).map_err(|source| IoError::Io { path: steps_path.clone(), source })?;
    write_step_log(std::io::BufWriter::new(file), &eq.steps, &meta).map_err(|source| IoError::Io { path: steps_path.clone(), source })?;
    summary.files.push(steps_path);

    let log_path = dir.join("equilibrium.log");
    write_text(&log_path, &step_log_text(&eq.steps, eq.seconds))?;
    summary.files.push(log_path);
    Ok(())
}

pub fn run_equilibrium(config: &RunConfig, workers: &Workers, log: &mut dyn FnMut(&str)) -> Result<RunSummary, Error> {
    let dir = config.run.output.clone();
    prepare_output(&dir)?;
    let model = Model::build(config, workers)?;
    log(&format!("{} auxiliary functions on a {}x{} grid", model.generator.hierarchy().len(), model.grid.rows(), model.grid.cols()));
    let eq = equilibrate(config, &model, log)?;
    let mut summary = RunSummary::default();
    check_boundary(&eq, config, &mut summary);
    write_equilibrium_files(config, &model, &eq, &dir, &mut summary)?;
    summary.lines.push(format!(
        "equilibrium at t = {:.3}: <cos theta> = {:.10e}, <p> = {:.10e}, amplitude = {:.10e}",
        eq.report.t, eq.cos_theta, eq.momentum, eq.amplitude
    ));
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct Response {
    pub series: ResponseSeries,
    pub spectrum: Spectrum,
}

/// Kick-and-propagate response of an equilibrium state plus its spectrum.
pub fn respond(config: &RunConfig, model: &Model, equilibrium: &HeomState) -> Result<Response, Error> {
    let mut prop = Propagator::new(config.stepping.clone())?;
    let r = &config.response;
    let series = response_function(&mut prop, &model.generator, equilibrium, r.t_max, r.dt_sample)?;
    let spectrum = spectrum(&series, &r.omegas(), r.damping);
    Ok(Response { series, spectrum })
}

/// Uses `checkpoint` as the equilibrium state when given, otherwise relaxes
/// first and writes the equilibrium files too.
pub fn run_response(
    config: &RunConfig,
    workers: &Workers,
    checkpoint: Option<&Path>,
    log: &mut dyn FnMut(&str),
) -> Result<RunSummary, Error> {
    let dir = config.run.output.clone();
    prepare_output(&dir)?;
    let model = Model::build(config, workers)?;
    let mut summary = RunSummary::default();
    let state = match checkpoint {
        Some(path) => {
            let state = load_checkpoint(path)?;
            if state.layout() != model.generator.layout() {
                return Err(IoError::Format {
                    path: path.to_path_buf(),
                    message: format!(
                        "checkpoint shape {:?} does not match the configuration {:?}",
                        state.layout(),
                        model.generator.layout()
                    ),
                }
                .into());
            }
            state
        }
        None => {
            let eq = equilibrate(config, &model, log)?;
            check_boundary(&eq, config, &mut summary);
            write_equilibrium_files(config, &model, &eq, &dir, &mut summary)?;
            eq.state
        }
    };
    log("propagating the kicked state");
    let resp = respond(config, &model, &state)?;
    let meta = config.describe();
    let r_path = dir.join("response.csv");
    write_table_file(&r_path, &["t", "R"], &meta, resp.series.times.iter().zip(&resp.series.values).map(|(t, v)| vec![*t, *v]))?;
    summary.files.push(r_path);
    let s_path = dir.join("spectrum.csv");
    write_table_file(
        &s_path,
        &["omega", "sigma"],
        &meta,
        resp.spectrum.omegas.iter().zip(&resp.spectrum.sigma).map(|(w, s)| vec![*w, *s]),
    )?;
    summary.files.push(s_path);
    let peaks: Vec<String> = resp.spectrum.prominent_maxima(0.05).iter().map(|&i| format!("{:.4}", resp.spectrum.omegas[i])).collect();
    summary.lines.push(format!("spectral maxima at omega = [{}]", peaks.join(", ")));
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FluxPoint {
    pub flux: f64,
    pub cos_theta: f64,
    pub momentum: f64,
    pub amplitude: f64,
    pub pdf: Vec<f64>,
}

/// Equilibrium observables at each flux of the scan.
pub fn scan_flux(config: &RunConfig, workers: &Workers, log: &mut dyn FnMut(&str)) -> Result<Vec<FluxPoint>, Error> {
    let mut out = Vec::new();
    for &flux in &config.flux_scan.fluxes {
        let mut c = config.clone();
        c.ring.flux = flux;
        c.rehash();
        log(&format!("flux {flux}"));
        let model = Model::build(&c, workers)?;
        let eq = equilibrate(&c, &model, log)?;
        out.push(FluxPoint { flux, cos_theta: eq.cos_theta, momentum: eq.momentum, amplitude: eq.amplitude, pdf: eq.pdf });
    }
    Ok(out)
}

pub fn run_flux_scan(config: &RunConfig, workers: &Workers, log: &mut dyn FnMut(&str)) -> Result<RunSummary, Error> {
    let dir = config.run.output.clone();
    prepare_output(&dir)?;
    let points = scan_flux(config, workers, log)?;
    let meta = config.describe();
    let mut summary = RunSummary::default();
    let path = dir.join("flux_scan.csv");
    write_table_file(
        &path,
        &["flux", "cos_theta", "momentum", "amplitude"],
        &meta,
        points.iter().map(|p| vec![p.flux, p.cos_theta, p.momentum, p.amplitude]),
    )?;
    summary.files.push(path);
    let grid = config.build_grid();
    let mut columns = vec!["theta".to_string()];
    columns.extend((0..points.len()).map(|i| format!("P{i}")));
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let fluxes: Vec<String> = points.iter().map(|p| p.flux.to_string()).collect();
    let pdf_path = dir.join("flux_scan_pdf.csv");
    write_table_file(
        &pdf_path,
        &cols,
        &format!("{meta} fluxes={}", fluxes.join(";")),
        grid.theta().iter().enumerate().map(|(j, t)| std::iter::once(*t).chain(points.iter().map(|p| p.pdf[j])).collect()),
    )?;
    summary.files.push(pdf_path);
    Ok(summary)
}

/// Per-axis Padé data and the quality of the `coth` surrogate over
/// `x ∈ (0, xmax]`.
pub fn pade_table(config: &RunConfig, xmax: f64) -> Result<String, Error> {
    let mut s = String::new();
    for axis in Axis::BOTH {
        let set = hierarchy_coefficients(&config.bath, axis, config.ring.radius, config.ring.hbar)?;
        let _ = writeln!(s, "axis {axis}: K = {}, a0 = {:.12e}, b0 = {:.12e}", set.poles(), set.a0, set.b0);
        for j in 0..set.poles() {
            let _ = writeln!(s, "  j = {}: nu = {:.12e}, etabar = {:.12e}, a_j = {:.12e}", j + 1, set.nu[j + 1], set.etabar[j], set.aj[j]);
        }
        let _ = writeln!(s, "  max |surrogate - coth| on (0, {xmax}] = {:.3e}", coth_surrogate_error(&set, xmax));
        let _ = writeln!(s, "  C(0) = {:.12e}", symmetrized_correlation(&set, 0.0));
    }
    Ok(s)
}

pub fn run_pade_check(config: &RunConfig, xmax: f64) -> Result<RunSummary, Error> {
    let dir = config.run.output.clone();
    prepare_output(&dir)?;
    let text = pade_table(config, xmax)?;
    let path = dir.join("pade.txt");
    write_text(&path, &format!("# {}\n{text}", config.describe()))?;
    Ok(RunSummary { files: vec![path], warnings: Vec::new(), lines: text.lines().map(String::from).collect() })
}

/// Checks that the configuration can be built within the memory budget
/// without running anything.
pub fn validate(config: &RunConfig) -> Result<RunSummary, Error> {
    let grid = config.build_grid();
    let budget = config.hierarchy.memory_budget_mb as u128 * (1 << 20);
    let h =
        HierarchyIndexSet::enumerate_within(config.bath.k_x, config.bath.k_y, config.hierarchy.n_max, grid.cells() * STATE_COPIES, budget)?;
    GeneratorTables::new(&grid, &config.ring, &config.bath, config.run.strict_paper_form)?;
    let mb = (h.len() * grid.cells() * STATE_COPIES * 8) as f64 / (1 << 20) as f64;
    Ok(RunSummary {
        files: Vec::new(),
        warnings: Vec::new(),
        lines: vec![
            format!("config {}", config.hash()),
            format!("{} auxiliary functions, {}x{} grid, about {mb:.1} MiB of propagation buffers", h.len(), grid.rows(), grid.cols()),
        ],
    })
}
