//! Solver for the hierarchical quantum Fokker-Planck equations of a charged
//! particle on an Aharonov-Bohm ring coupled to two anisotropic Drude baths.
//!
//! The physical state is a Wigner function on a half-integer momentum
//! lattice times the angle circle; bath memory is carried by auxiliary
//! Wigner functions indexed by Padé modes.

pub mod config;
pub mod generator;
pub mod grid;
pub mod hierarchy;
pub mod io;
pub mod observables;
pub mod pade;
pub mod parallel;
pub mod propagator;
pub mod runs;

use thiserror::Error;

pub use config::{parse_config, ConfigError, RunConfig};
pub use generator::{GeneratorError, GeneratorTables, HeomGenerator, Potential, RingSpec};
pub use grid::{Field, GridError, PhaseSpaceGrid};
pub use hierarchy::{HierarchyError, HierarchyIndexSet};
pub use io::IoError;
pub use observables::{ResponseSeries, Spectrum};
pub use pade::{Axis, BathSpec, PadeError, PadePoles, PadeSet};
pub use parallel::Workers;
pub use propagator::{HeomState, OdeSystem, PropagationError, Propagator, StateLayout, SteadyState, StepControl};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Pade(#[from] PadeError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("worker pool: {0}")]
    Workers(String),
}

/// Coarse failure classes, one per process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Validation,
    Convergence,
    Numeric,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(e) if e.is_parse() => ErrorKind::Parse,
            Error::Config(_) | Error::Grid(_) | Error::Pade(_) | Error::Hierarchy(_) | Error::Generator(_) | Error::Workers(_) => {
                ErrorKind::Validation
            }
            Error::Propagation(PropagationError::NoConvergence { .. }) => ErrorKind::Convergence,
            Error::Propagation(PropagationError::InvalidControl(_)) => ErrorKind::Validation,
            Error::Propagation(_) => ErrorKind::Numeric,
            Error::Io(_) => ErrorKind::Io,
        }
    }
}
