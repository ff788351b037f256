use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
///
/// The variants line up with the CLI exit codes: schema/config problems,
/// data problems, and numerical failures are reported differently.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("arm {arm} of study {study} has no usable rows")]
    DegenerateArm { study: String, arm: usize },

    #[error("treatment mapping error: {0}")]
    Mapping(String),

    #[error("treatment network is disconnected: {0}")]
    Disconnected(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("parameters not identifiable: {0}")]
    Identifiability(String),

    #[error("profile error: {0}")]
    Profile(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("ingestion error at line {line}: {msg}")]
    Ingest { line: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
