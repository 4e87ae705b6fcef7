use thiserror::Error;

/// Errors raised across the library. Variants carry enough context for the
/// CLI to print a one-line machine-parsable diagnostic.
#[derive(Debug, Error)]
pub enum Error {
    #[error("every weight is zero")]
    AllZero,
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weight {index} is not finite")]
    NonFinite { index: usize },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("feature {feature} is outside the table of {len} rows")]
    FeatureOutOfRange { feature: usize, len: usize },
    #[error("label {label} has an empty clipping block")]
    EmptyBlock { label: usize },
    #[error("label {label} is outside 0..{m}")]
    LabelOutOfRange { label: usize, m: usize },
    #[error("the approximate mechanism requires delta in (0, 1)")]
    DeltaRequired,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} is outside 0..{k}")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("horizon {horizon} is below the minimum {minimum} for this construction")]
    HorizonTooShort { horizon: usize, minimum: f64 },
    #[error("empty input list")]
    EmptyList,
    #[error("invalid parameter `{field}`: {message}")]
    InvalidParameter { field: &'static str, message: String },
    #[error("invalid config field `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("learner protocol violation: {0}")]
    Protocol(&'static str),
    #[error("hypothesis class: {0}")]
    InvalidClass(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier for the variant, used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::AllZero => "AllZero",
            Error::NegativeWeight { .. } => "NegativeWeight",
            Error::NonFinite { .. } => "NonFinite",
            Error::NotNormalized { .. } => "NotNormalized",
            Error::FeatureOutOfRange { .. } => "FeatureOutOfRange",
            Error::EmptyBlock { .. } => "EmptyBlock",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::DeltaRequired => "DeltaRequired",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::HorizonTooShort { .. } => "HorizonTooShort",
            Error::EmptyList => "EmptyList",
            Error::InvalidParameter { .. } => "InvalidParameter",
            Error::ConfigInvalid { .. } => "ConfigInvalid",
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::Protocol(_) => "Protocol",
            Error::InvalidClass(_) => "InvalidClass",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
