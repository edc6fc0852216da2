use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// Every variant maps to a stable, machine-parsable class name through
/// [`Error::class`]; the CLI prints that class as the first token of its
/// single-line error report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot normalize answer {raw:?} as {kind}")]
    MalformedAnswer { raw: String, kind: String },

    #[error("unknown extractor kind {0:?}")]
    UnknownExtractor(String),

    #[error("samples span several problems ({first:?} and {other:?})")]
    MixedProblem { first: String, other: String },

    #[error("cannot tally an empty sample list")]
    EmptySamples,

    #[error("no preference pairs survived filtering")]
    EmptyDataset,

    #[error("reward-model pool for {problem_id:?} has fewer than two distinct answers")]
    DegeneratePool { problem_id: String },

    #[error("answer {answer:?} is outside the domain of problem {problem_id:?}")]
    UnknownAnswer { problem_id: String, answer: String },

    #[error("problem {0:?} has no row in the policy")]
    UnknownProblem(String),

    #[error("loss is not finite: {0}")]
    NonFiniteLoss(String),

    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: u32, message: String },

    #[error("gold answer missing for problem {0:?}")]
    MissingGold(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("{path}: line {line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable class name used in machine-readable error lines.
    pub fn class(&self) -> &'static str {
        match self {
            Error::MalformedAnswer { .. } => "MalformedAnswer",
            Error::UnknownExtractor(_) => "UnknownExtractor",
            Error::MixedProblem { .. } => "MixedProblem",
            Error::EmptySamples => "EmptySamples",
            Error::EmptyDataset => "EmptyDataset",
            Error::DegeneratePool { .. } => "DegeneratePool",
            Error::UnknownAnswer { .. } => "UnknownAnswer",
            Error::UnknownProblem(_) => "UnknownProblem",
            Error::NonFiniteLoss(_) => "NonFiniteLoss",
            Error::BackendUnavailable { .. } => "BackendUnavailable",
            Error::MissingGold(_) => "MissingGold",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Parse { .. } => "ParseError",
            Error::Validation { .. } => "ValidationError",
            Error::Schema { .. } => "SchemaError",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "JsonError",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(key: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
