use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate recycle composition: volatility-weighted denominator is {0}")]
    DegenerateRecycle(f64),

    #[error("non-finite value in plant term `{term}`")]
    NonFiniteDerivative { term: &'static str },

    #[error("non-finite state after integration step {step}")]
    NonFiniteState { step: usize },

    #[error("library entry `{entry}` is outside its domain at value {value}")]
    LiftingDomain { entry: String, value: f64 },

    #[error("lifting failed at sample {sample}: {source}")]
    LiftingSample {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("innovation covariance {0} is not positive")]
    InnovationCovariance(f64),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("feedback gain is not stabilizing: spectral radius {0}")]
    NotSchurStable(f64),

    #[error("QP solver reported infeasibility: {0}")]
    Infeasible(String),

    #[error("controller failed at step {step}: {source}")]
    Controller {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite condensing block: {0}")]
    NonFiniteCondensing(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }
}
