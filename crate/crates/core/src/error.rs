use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("wavefunctions live on different grids")]
    GridMismatch,

    #[error("invalid lattice parameters: {0}")]
    InvalidParams(String),

    #[error("invalid duration {0} ms (must be positive and finite)")]
    InvalidDuration(f64),

    #[error("time {t} ms outside the sequence range [0, {duration}] ms")]
    OutOfRange { t: f64, duration: f64 },

    #[error("invalid control sequence: {0}")]
    InvalidSequence(String),

    #[error("eigensolver did not converge (best relative residual {best_residual:.3e})")]
    NoConvergence { best_residual: f64 },

    #[error("doublet states could not be localized (best well occupation {best_mass:.3})")]
    Delocalized { best_mass: f64 },

    #[error("singular linear system in propagation step")]
    SingularSystem,

    #[error("norm drift {drift:.3e} exceeds tolerance {tolerance:.1e}")]
    NormDrift { drift: f64, tolerance: f64 },

    #[error("exchange symmetry drift {drift:.3e} exceeds tolerance {tolerance:.1e}")]
    SymmetryDrift { drift: f64, tolerance: f64 },

    #[error("ambiguous eigenstate match: overlaps {best:.4} and {second:.4} are within 1%")]
    AmbiguousMatch { best: f64, second: f64 },

    #[error("scan points do not match: {0}")]
    MismatchedPoints(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
