use std::path::PathBuf;

/// Errors produced by the solver, its oracles and its file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("backward requires a scalar output, node {node} has shape {rows}x{cols}")]
    NonScalarOutput { node: usize, rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {context} ({diagnostics})")]
    Numerical { context: String, diagnostics: String },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged {
        step: usize,
        loss: f64,
        /// Networks as they were after the last finite step.
        last_good: Box<crate::nets::Checkpoint>,
    },
    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("near-singular matrix: smallest eigenvalue {0:e}")]
    NearSingular(f64),
    #[error("input is not sorted ascending: {0}")]
    Unsorted(&'static str),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn numerical(context: impl Into<String>, diagnostics: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            diagnostics: diagnostics.into(),
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite arithmetic rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. } | Error::Diverged { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
