//! Error type of the command-line driver, mapped onto the process exit codes:
//!
//! - `0` — success,
//! - `1` — usage errors (bad flags, unparseable flag values, bad seed env var),
//! - `2` — data errors (unreadable files, malformed JSON or case text, schema
//!   violations, invalid grid structure),
//! - `3` — algorithm failures (scenario generation, simulation, or learning
//!   stages rejecting otherwise well-formed inputs).

use std::path::PathBuf;

use gridsleuth_core::grid::GridError;
use gridsleuth_core::learn::LearnError;
use gridsleuth_core::moments::MomentError;
use gridsleuth_core::sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation (flag combinations, value ranges, seed environment).
    #[error("{0}")]
    Usage(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Structurally malformed input text (bad JSON syntax, truncated file).
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },

    /// Well-formed input that violates the schema; `field` names the
    /// offending element (e.g. `edges[0].r`).
    #[error("{path}: invalid field {field}: {message}")]
    Schema { path: PathBuf, field: String, message: String },

    /// Case-file text using syntax outside the supported matrix subset.
    #[error("{path}:{line}: unsupported construct: {message}")]
    Unsupported { path: PathBuf, line: usize, message: String },

    #[error(transparent)]
    Grid(#[from] GridError),

    #[error(transparent)]
    Moment(#[from] MomentError),

    #[error(transparent)]
    Sim(#[from] SimError),

    #[error(transparent)]
    Learn(#[from] LearnError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. }
            | CliError::Parse { .. }
            | CliError::Schema { .. }
            | CliError::Unsupported { .. }
            | CliError::Grid(_)
            | CliError::Moment(_) => 2,
            CliError::Sim(_) | CliError::Learn(_) => 3,
        }
    }

    /// Read a file as bytes with path-carrying error context.
    pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>, CliError> {
        std::fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
    }

    /// Write a file with path-carrying error context.
    pub fn write_file(path: &std::path::Path, contents: &str) -> Result<(), CliError> {
        std::fs::write(path, contents)
            .map_err(|source| CliError::Io { path: path.to_path_buf(), source })
    }
}
