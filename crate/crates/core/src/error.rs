use thiserror::Error;

use crate::state::IterateRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh file line {line}: {message}")]
    MeshFormat { line: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("linear solver failure: {message} (relative residual {relative_residual:e})")]
    LinearSolver { message: String, relative_residual: f64 },

    #[error(
        "state iteration did not converge in {iterations} iterations (last nodal change {last_change:e})"
    )]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        history: Vec<IterateRecord>,
    },

    #[error(
        "solution not bounded away from u_*: max u = {max_u} reached truncation level {level}"
    )]
    Criticality {
        max_u: f64,
        level: f64,
        history: Vec<IterateRecord>,
    },

    #[error("adjoint or sensitivity solve failed: {0}")]
    Adjoint(String),

    #[error("certificate infeasible: {0}")]
    CertificateInfeasible(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
