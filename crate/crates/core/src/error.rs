use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid norm: {0}")]
    InvalidNorm(String),

    #[error("dual norm not certified: {0}")]
    DualNormUncertified(String),

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate points at indices {0} and {1}")]
    DuplicatePoints(usize, usize),

    #[error("Lipschitz constant {requested} is below the data constant {required}")]
    LipschitzTooSmall { requested: f64, required: f64 },

    #[error("index set mismatch: {0}")]
    IndexMismatch(String),

    #[error("net premise violated: {0}")]
    NetPremise(String),

    #[error("missing field metadata: {0}")]
    MissingMetadata(&'static str),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Attach a context message to an error while keeping the source chain.
pub trait ResultExt<T> {
    fn context<C: Into<String>>(self, context: C) -> Result<T>;
    fn with_context<C: Into<String>, F: FnOnce() -> C>(self, f: F) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context<C: Into<String>>(self, context: C) -> Result<T> {
        self.map_err(|source| Error::Context {
            context: context.into(),
            source: Box::new(source),
        })
    }

    fn with_context<C: Into<String>, F: FnOnce() -> C>(self, f: F) -> Result<T> {
        self.map_err(|source| Error::Context {
            context: f().into(),
            source: Box::new(source),
        })
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
