use std::path::PathBuf;

use crate::generation::RawImage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("root directory not found: {0}")]
    MissingRoot(PathBuf),

    #[error("no records ingested from {0}")]
    NoRecords(PathBuf),

    #[error("unmapped class string {value:?} at row {row}")]
    UnmappedClass { row: usize, value: String },

    #[error("sizes do not sum to record count: {sizes:?} vs {count}")]
    SizesDoNotSum { sizes: [usize; 3], count: usize },

    #[error("split infeasible under class balance: {0}")]
    InfeasibleSplit(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate data for bootstrap (iteration {iteration})")]
    DegenerateBootstrap { iteration: usize },

    #[error("class imbalance after curation: healthy={healthy}, pneumonia={pneumonia}")]
    ClassImbalance { healthy: usize, pneumonia: usize },

    #[error("provider refused request: {0}")]
    ProviderRefused(String),

    #[error("provider transport failed after {attempts} attempts ({message}); {} partial images", .partial.len())]
    PartialResults {
        attempts: u32,
        message: String,
        partial: Vec<RawImage>,
    },

    #[error("{0}")]
    Split(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("model: {0}")]
    Model(#[from] candle_core::Error),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("record {id}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown record id: {0}")]
    UnknownRecord(String),

    #[error("backbone {0} does not expose gradients")]
    NotDifferentiable(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
