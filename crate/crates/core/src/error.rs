use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("non-finite value in {context}: {value}")]
    NonFinite { context: String, value: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` in column `{column}` (row {row})")]
    NonNumeric {
        column: String,
        value: String,
        row: usize,
    },

    #[error("column `{0}` is constant; min-max normalization has zero range")]
    ConstantColumn(String),

    #[error("duplicate sample_id `{0}`")]
    DuplicateSampleId(String),

    #[error("image file not found: {0}")]
    MissingImage(String),

    #[error("unknown digit class {0}")]
    UnknownDigitClass(u8),

    #[error("treatment arm {arm} absent from training data")]
    ArmAbsent { arm: u8 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("operation requires a {expected} model, got {actual}")]
    WrongMode {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("model has no convolutional layer")]
    NoConvLayer,

    #[error("invalid model spec: {0}")]
    InvalidModelSpec(String),

    #[error("ratio {0} falls outside the provided bin edges")]
    RatioOutOfRange(f64),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("attribution map format error: {0}")]
    MapFormat(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),

    #[error("plot error: {0}")]
    Plot(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
