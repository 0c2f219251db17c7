//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use qhfpe::{BathSpec, GeneratorTables, HeomGenerator, HeomState, HierarchyIndexSet, PhaseSpaceGrid, RingSpec, Workers};

/// A generator for an anisotropic bath (η_x = 2η_y) and a relaxed-looking
/// state to feed it.
pub fn fixture(k: usize, nmax: usize, np: usize, m: usize, workers: usize) -> (HeomGenerator, HeomState) {
    let grid = PhaseSpaceGrid::new(np, m, 1.0).expect("grid");
    let ring = RingSpec { flux: 0.1, ..RingSpec::default() };
    let bath = BathSpec { eta_x: 0.2, eta_y: 0.1, gamma_x: 1.0, gamma_y: 1.0, k_x: k, k_y: k, beta: 1.0 };
    let tables = GeneratorTables::new(&grid, &ring, &bath, false).expect("tables");
    let hierarchy = Arc::new(HierarchyIndexSet::enumerate(k, k, nmax));
    let workers = Workers::new(workers).expect("worker pool");
    let mut state = HeomState::thermal_guess(&grid, &ring, bath.beta, hierarchy.len());
    // Fill the auxiliary functions with something nonzero and smooth.
    let cells = grid.cells();
    for (i, v) in state.data_mut().iter_mut().enumerate().skip(cells) {
        *v = 1e-3 * ((i % 97) as f64 * 0.37).sin();
    }
    let generator = HeomGenerator::new(grid, hierarchy, tables, workers).expect("generator");
    (generator, state)
}
