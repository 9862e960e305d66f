//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Geometry that admits no well-defined answer (coincident points,
    /// collinear frame triples, zero-length bonds).
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("residue {residue}: only {eligible} eligible neighbours, {k} required")]
    TooFewNeighbors {
        residue: usize,
        eligible: usize,
        k: usize,
    },

    /// Wraps an error raised while processing one protein.
    #[error("protein {protein}: {source}")]
    InProtein {
        protein: String,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn in_protein(self, protein: &str) -> Self {
        Error::InProtein {
            protein: protein.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
