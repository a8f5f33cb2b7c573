use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {kind}")]
    GraphFormat {
        path: PathBuf,
        line: usize,
        kind: GraphFormatError,
    },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("graph generation failed: {0}")]
    Generation(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Specific diagnostics for the text graph format.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphFormatError {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("malformed edge line: {0}")]
    EdgeSyntax(String),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("node id {id} out of range for {n} nodes")]
    NodeOutOfRange { id: usize, n: usize },
    #[error("edge ({0}, {1}) is not listed as u < v in sorted order (asymmetric or duplicate edge list)")]
    EdgeOrder(usize, usize),
    #[error("expected {expected} node rows, found {found}")]
    LabelCount { expected: usize, found: usize },
    #[error("malformed node row: {0}")]
    NodeRow(String),
    #[error("trailing content after the last node row")]
    Trailing,
}

impl Error {
    /// Stable short code used as a prefix in command-line diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::GraphFormat { .. } => "format",
            Error::Checkpoint { .. } => "checkpoint",
            Error::NonFinite(_) => "numeric",
            Error::Generation(_) => "generation",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }
}
