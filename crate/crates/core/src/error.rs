use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("row {0}: text is empty")]
    EmptyText(usize),
    #[error("row {row}: label `{label}` is not in the label schema")]
    UnknownLabel { row: usize, label: String },
    #[error("label index {0} is out of range for the schema")]
    LabelOutOfRange(usize),
    #[error("label schema needs at least 2 distinct labels, found {0}")]
    SchemaTooSmall(usize),
    #[error("invalid label schema: {0}")]
    InvalidSchema(String),
    #[error("document `{0}` has no gold label")]
    MissingGold(String),
    #[error("malformed dataset: {0}")]
    MalformedDataset(String),

    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no term survived the document-frequency cut")]
    EmptyVocabulary,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("batch size must be at least 1")]
    InvalidBatchSize,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("labeling budget of {0} labels is exhausted")]
    BudgetExhausted(usize),
    #[error("selection pool is exhausted")]
    PoolExhausted,
    #[error("document `{0}` is not in the selection pool")]
    NotInPool(String),
    #[error("evaluation set is empty")]
    EmptyEval,

    #[error("length mismatch: {0} predictions vs {1} gold labels")]
    LengthMismatch(usize, usize),
    #[error("label index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend protocol error: {0}")]
    BackendProtocolError(String),
    #[error("no label hints supplied")]
    NoHints,

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
