use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time step {t} outside stream horizon 1..={horizon}")]
    HorizonExceeded { t: u64, horizon: u64 },

    #[error("cannot sample from an empty pool")]
    EmptyPool,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("mixed replay needs an even minibatch size, got {0}")]
    OddBatch(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("batch for step {got} arrived after step {last} was already integrated")]
    StepOrder { last: u64, got: u64 },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("moving-average weight {0} outside [0, 1]")]
    InvalidWeight(f64),

    #[error("operation requires a classification model")]
    NotClassification,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition {assumption} violated: {detail}")]
    Precondition {
        assumption: &'static str,
        detail: String,
    },

    #[error("missing metric record: {0}")]
    MissingRecord(String),

    #[error("unknown preset {0:?}")]
    UnknownPreset(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
