use thiserror::Error;

/// Errors raised by the solvers and samplers.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto "bad input" versus "numerical quality" failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid offspring law: {0}")]
    InvalidLaw(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value {value} outside [0, 1] by more than the clamp tolerance")]
    OutOfRange { value: f64 },

    #[error("shooting integration diverged at x = {x}: {reason}")]
    ShootingDiverged { x: f64, reason: String },

    #[error("{what}: fit quality R^2 = {r2:.6} below required {required}")]
    PoorFit { what: String, r2: f64, required: f64 },

    #[error("stability monitor tripped at t = {t}: excursion {excursion:e} exceeds {tolerance:e}")]
    Stability { t: f64, excursion: f64, tolerance: f64 },

    #[error("{0} did not converge")]
    NotConverged(String),

    #[error("moment not flat at t = {t}: |d log I/dt| = {rate:e} > {tolerance:e}")]
    NotFlat { t: f64, rate: f64, tolerance: f64 },

    #[error("negative density {value:e} beyond tolerance at t = {t}")]
    Negative { t: f64, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("population cap {cap} exceeded")]
    PopulationCap { cap: usize },
}

impl Error {
    /// True for failures of a numerical-quality monitor, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ShootingDiverged { .. }
                | Error::PoorFit { .. }
                | Error::Stability { .. }
                | Error::NotConverged(_)
                | Error::NotFlat { .. }
                | Error::Negative { .. }
                | Error::PopulationCap { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
