use thiserror::Error;

/// Errors produced by the spectral toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),
    #[error("kernel rejected: {0}")]
    InvalidKernel(String),
    #[error("quadrature did not converge (best estimate {best}, error estimate {error:e})")]
    QuadratureFailure { best: f64, error: f64 },
    #[error("Green's function at lambda = 0 diverges for this kernel")]
    DivergentGreen,
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
    #[error("no bracket found below lambda = {0:e}")]
    SolverOverflow(f64),
    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),
    #[error("symbol degeneracy: lower constant c1 = {0:e} is not positive")]
    SymbolDegeneracy(f64),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("box too large: {0} sites")]
    BoxTooLarge(usize),
    #[error("uniformization series too long (rate * t = {0:e}); use a shorter time step")]
    SeriesTooLong(f64),
    #[error("estimation impossible: {0}")]
    EstimationImpossible(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
