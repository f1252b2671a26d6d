use thiserror::Error;

/// Errors raised by the solver, the node model and the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A surrogate, solver or pipeline parameter violates its constraints.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Matrix or vector dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The scalar fixed-point iteration did not contract within its budget.
    #[error("fixed-point iteration did not converge after {iterations} iterations")]
    IterationLimit { iterations: usize },

    /// NaN/Inf iterates, failed factorizations and similar.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed input data (files, records, configuration).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A failure inside one stage of the selection pipeline.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// The innermost error, with pipeline stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
