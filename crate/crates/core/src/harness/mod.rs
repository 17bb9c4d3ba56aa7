//! Test-case registry, reference solutions, error sweeps, order fits, config and output files.

pub mod cases;
pub mod cli;
pub mod config;
pub mod output;
pub mod reference;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

use crate::diagnostics::DiagnosticsError;
use crate::mesh::MeshError;
use crate::scheme::SchemeError;

pub use cases::{builtin_case, TestCase, CASE_NAMES};
pub use config::RunConfig;
pub use reference::{compute_reference, l1_error, ReferenceCache, Snapshot, CACHE_ENV};
pub use sweep::{fit_order, fit_slope, sweep, Axis, ErrorRow, ErrorTable, OrderFit, RowErrors, SweepSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown test case {0:?} (expected one of case1, case2, case3)")]
    UnknownCase(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} list is empty")]
    EmptyList(&'static str),
    #[error("time step {dt} does not divide the final time {t_final}")]
    DtNotDivisor { dt: f64, t_final: f64 },
    #[error("final times differ: {coarse} against reference {reference}")]
    TimeMismatch { coarse: f64, reference: f64 },
    #[error("reference has {reference} cells but the mesh has {mesh}")]
    ReferenceMismatch { reference: usize, mesh: usize },
    #[error("order fit needs at least 3 usable rows, got {0}")]
    TooFewRows(usize),
}

impl HarnessError {
    /// Failures of the computation itself, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            HarnessError::Scheme(SchemeError::InvalidParams(_) | SchemeError::InvalidData(_)) => false,
            HarnessError::Scheme(_) | HarnessError::Diagnostics(_) | HarnessError::TimeMismatch { .. } => true,
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Whether `dt` divides `t_final` up to rounding.
pub fn dt_divides(dt: f64, t_final: f64) -> bool {
    let q = t_final / dt;
    q >= 1.0 && (q - q.round()).abs() <= 1e-9 * q
}
