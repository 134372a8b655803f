use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("incomplete row {row}: variable `{variable}` is masked")]
    IncompleteRow { row: usize, variable: String },
    #[error("empty complete-case set")]
    EmptyCompleteCases,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid formula: {0}")]
    InvalidFormula(String),

    #[error("singular design")]
    SingularDesign,
    #[error("degenerate outcome: all responses are {0}")]
    DegenerateOutcome(u8),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cannot draw from unconverged fit")]
    UnconvergedFit,

    #[error("no observed donors for variable `{0}`")]
    NoObservedDonors(String),
    #[error("stratum `{label}` too small/degenerate: {reason}")]
    DegenerateStratum { label: String, reason: String },
    #[error("invalid imputation config: {0}")]
    InvalidConfig(String),
    #[error("unsupported imputation problem: {0}")]
    UnsupportedProblem(String),
    #[error("imputation {dataset}, iteration {iteration}: {source}")]
    Imputation {
        dataset: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient imputations: need m >= 2, got {0}")]
    InsufficientImputations(usize),
    #[error("analysis fit failed on imputed dataset {dataset}: {source}")]
    PooledFit {
        dataset: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown data-generating mechanism `{0}`")]
    UnknownDgm(String),
    #[error("calibration bracket failure: target {target} not attainable on [-20, 20]")]
    BracketFailure { target: f64 },

    #[error("undefined relative bias: true value is zero")]
    UndefinedRelativeBias,
    #[error("undefined relative error: empirical SE is not positive")]
    UndefinedRelativeError,
    #[error("missing table cell: dgm {dgm}, method {method}, term {term}")]
    MissingCell {
        dgm: String,
        method: String,
        term: String,
    },

    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("csv header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_imputation(self, dataset: usize, iteration: usize) -> Self {
        Error::Imputation {
            dataset,
            iteration,
            source: Box::new(self),
        }
    }
}
