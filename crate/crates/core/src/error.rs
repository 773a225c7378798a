use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which side of a correlation had no variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Scores,
    Human,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Scores => f.write_str("scores"),
            Side::Human => f.write_str("human"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("input text is empty")]
    EmptyInput,

    #[error("encoder input has {len} positions, backend accepts at most {max}")]
    LengthExceeded { len: usize, max: usize },

    #[error("backend capability missing: {0}")]
    Capability(String),

    #[error("source set is empty")]
    DegenerateSource,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("alignment error{}: {message}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Alignment { line: Option<usize>, message: String },

    #[error("zero variance on the {0} side")]
    ZeroVariance(Side),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("pair excluded: {0}")]
    ExcludedPair(String),

    #[error("vocabulary exhausted: capacity {0}")]
    VocabularyExhausted(usize),

    #[error("pair `{id}`: {source}")]
    Pair {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("backend fingerprint mismatch: checkpoint has {checkpoint}, backend is {backend}")]
    FingerprintMismatch { checkpoint: String, backend: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attach a pair identifier, unless one is already attached.
    pub fn for_pair(self, id: impl Into<String>) -> Self {
        match self {
            e @ Error::Pair { .. } => e,
            other => Error::Pair {
                id: id.into(),
                source: Box::new(other),
            },
        }
    }

    /// Strips any pair wrapper.
    pub fn root(&self) -> &Error {
        match self {
            Error::Pair { source, .. } => source.root(),
            other => other,
        }
    }
}
