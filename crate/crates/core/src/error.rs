use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid sparse entry ({row}, {col}) for dimension {dim}")]
    InvalidEntry { row: usize, col: usize, dim: usize },
    #[error("sparsity pattern does not match the symbolic analysis")]
    PatternMismatch,
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("location {0} lies outside the mesh")]
    PointOutsideMesh(usize),
    #[error("non-positive input: {0}")]
    NonPositiveInput(String),
    #[error("|rho| = {rho} exceeds the reformulation I limit {limit}; use reformulation II")]
    RhoTooExtreme { rho: f64, limit: f64 },
    #[error("value {0} outside the prior support")]
    OutOfSupport(f64),
    #[error("density evaluated at the base model rho = 0")]
    AtBaseModel,
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("full conditional precision is singular")]
    SingularConditional,
    #[error("constraint design is rank deficient")]
    RankDeficientDesign,
    #[error("empty input")]
    EmptyInput,
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unparseable row at line {line}: {reason}")]
    UnparseableRow { line: usize, reason: String },
    #[error("variable `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration { iteration, source: Box::new(self) }
    }
}
