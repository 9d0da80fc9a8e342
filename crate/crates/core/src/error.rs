use thiserror::Error;

/// Errors raised by the simulation, estimation and verification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("invalid process family: {0}")]
    InvalidFamily(String),

    #[error("invalid observable: {0}")]
    InvalidObservable(String),

    #[error("matrix is not dilating; eigenvalue moduli: {moduli:?}")]
    NotDilating { moduli: Vec<f64> },

    #[error("singular matrix")]
    SingularMatrix,

    #[error("invalid representative set: {0}")]
    InvalidGamma(String),

    #[error("symbol {symbol} outside alphabet of size {size}")]
    SymbolOutOfRange { symbol: usize, size: usize },

    #[error("innovation kind does not match the family's noise model")]
    InnovationKind,

    #[error("state {value} outside the domain [0, 1] at step {step}")]
    StateOutOfDomain { step: usize, value: f64 },

    #[error("truncation tail bound {bound:e} exceeds tolerance {tolerance:e}; required depth {required_depth}")]
    TruncationTooShallow {
        bound: f64,
        tolerance: f64,
        required_depth: usize,
    },

    #[error("operation `{op}` is not supported for family `{family}`{hint}")]
    Unsupported {
        op: &'static str,
        family: &'static str,
        hint: &'static str,
    },

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("quadrature did not converge: achieved {achieved:e}, requested {requested:e}")]
    QuadratureDiverged { achieved: f64, requested: f64 },

    #[error("non-finite sample encountered: {0}")]
    NonFinite(String),

    #[error("monte carlo budget {budget} below minimum {minimum}")]
    BudgetTooSmall { budget: usize, minimum: usize },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("observable must be centered (invariant mean {mean:e})")]
    NotCentered { mean: f64 },

    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error("missing table entry: {0}")]
    MissingEntry(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
