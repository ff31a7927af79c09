use thiserror::Error;

/// Errors raised by the library. Numeric routines return these instead of
/// panicking so the experiment harness can flag a failed run and carry on.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the unit square")]
    OutOfDomain { x: f64, y: f64 },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("rejection sampler exhausted {budget} draws for a single point (sigma = {sigma})")]
    RejectionBudget { sigma: f64, budget: u64 },

    #[error("density model returned the floor value at every sample; the fit has failed")]
    DensityFailure,

    #[error("zero or negative density {density} at sample {index}")]
    NonPositiveDensity { index: usize, density: f64 },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("could not generate a two-class task after {attempts} attempts from seed {seed}")]
    DegenerateTask { seed: u64, attempts: u32 },

    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
