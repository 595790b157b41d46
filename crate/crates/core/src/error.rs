use std::path::PathBuf;

/// Coarse classification used by the CLI (exit codes) and the HTTP layer (status codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    NotFound,
    Capability,
    Backend,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("vector {index} has zero norm")]
    ZeroNorm { index: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid aspect weights: {0}")]
    InvalidWeights(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("perplexity {target} is unreachable for row {row} (closest achievable {achieved:.6})")]
    UnreachablePerplexity { row: usize, target: f64, achieved: f64 },

    #[error("KL divergence is infinite: q[{i}][{j}] = 0 where p > 0")]
    InfiniteDivergence { i: usize, j: usize },

    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("non-finite training loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("no valid summaries for document {doc} and aspect {aspect}")]
    NoValidSummaries { doc: String, aspect: String },

    #[error("unknown aspect: {0}")]
    UnknownAspect(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("missing ground truth for query {query}")]
    MissingTruth { query: usize },

    #[error("incomplete pair coverage for aspect {aspect}: {missing} of {expected} pairs missing")]
    IncompleteCoverage { aspect: String, missing: usize, expected: usize },

    #[error("backend lacks capability: {0}")]
    Capability(String),

    #[error("backend transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },

    #[error("malformed backend response: {reason}")]
    MalformedResponse { reason: String, body: String },

    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("unsupported atlas format version {found} (this build supports {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("corrupt atlas file: {0}")]
    Corrupt(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            DimensionMismatch { .. }
            | Degenerate(_)
            | ZeroNorm { .. }
            | NonFinite(_)
            | InvalidWeights(_)
            | InvalidConfig(_)
            | UnreachablePerplexity { .. }
            | InfiniteDivergence { .. }
            | NoValidSummaries { .. }
            | UnknownAspect(_)
            | UndefinedCorrelation(_)
            | MissingTruth { .. }
            | IncompleteCoverage { .. }
            | MalformedLine { .. }
            | Checksum(_)
            | UnsupportedVersion { .. }
            | Corrupt(_)
            | Json(_) => ErrorKind::Validation,
            NotFound(_) => ErrorKind::NotFound,
            Capability(_) => ErrorKind::Capability,
            Transport { .. } | MalformedResponse { .. } => ErrorKind::Backend,
            Diverged { .. } | NonFiniteLoss { .. } | Io { .. } => ErrorKind::Internal,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
