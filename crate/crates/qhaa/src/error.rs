use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("missing deformation term of order {0}")]
    MissingTerm(usize),
    #[error("stability violation: {0}")]
    StabilityViolation(String),
    #[error("term {0} has vanishing norm")]
    DegenerateTerm(usize),
    #[error("series ratio {0} is not below one")]
    DivergentSeries(f64),
    #[error("closure exceeded {limit} variables; pending monomials: {pending:?}")]
    ClosureLimitExceeded { limit: usize, pending: Vec<String> },
    #[error("monomial {0} cannot be rewritten inside the factor grammar")]
    UnrewritableMonomial(String),
    #[error("singular system")]
    SingularSystem,
    #[error("Neumann series diverges: norm {0} >= 1")]
    NeumannDivergence(f64),
    #[error("argument outside the valid domain: {0}")]
    OutOfDomain(String),
    #[error("matrix is not strictly diagonally dominant (margin {0})")]
    NotDiagonallyDominant(f64),
    #[error("no eigenvalue with negative real part")]
    NoDecayingModes,
    #[error("register layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("register needs {needed} qubits, cap is {cap}")]
    RegisterCap { needed: usize, cap: usize },
    #[error("Richardson extrapolation needs distinct epsilons")]
    DegenerateEpsilons,
    #[error("fine grid of {fine} cells does not nest a coarse grid of {coarse}")]
    IncompatibleGrids { fine: usize, coarse: usize },
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
