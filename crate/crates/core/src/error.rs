use thiserror::Error;

/// Errors raised by the modelling, analysis and synthesis layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    /// The feedback interconnection matrix of an LFT is (numerically) singular.
    #[error("algebraic loop not well-posed in {context} (sigma_min = {sigma_min:e})")]
    IllPosed { context: String, sigma_min: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A function that is only defined on internally stable systems was
    /// evaluated at an unstable point.
    #[error("closed loop unstable (spectral abscissa {alpha})")]
    Unstable { alpha: f64 },

    /// An active eigenvalue has deficient eigenvectors, so the spectral
    /// abscissa may not be locally Lipschitz here.
    #[error("derogatory active eigenvalue {re}+{im}i: not locally Lipschitz risk")]
    Derogatory { re: f64, im: f64 },

    #[error("H-infinity bisection stagnated in bracket [{lower}, {upper}]")]
    Stagnation { lower: f64, upper: f64 },

    #[error("stabilization failed; unstable scenarios: {0:?}")]
    StabilizationFailed(Vec<usize>),

    #[error("grid of {required} points exceeds cap {cap}")]
    GridCap { required: usize, cap: usize },

    #[error("{0}")]
    Invalid(String),

    #[error("problem file: {0}")]
    Parse(String),

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Error {
    Error::Dimension {
        what: what.into(),
        expected,
        got,
    }
}
