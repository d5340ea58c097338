//! Error types shared across the crate.
//!
//! Errors fall into three families: structural (shape/config violations),
//! numeric (non-finite values produced where finiteness is required), and
//! data (file format and I/O problems). The CLI maps these onto exit codes.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A dimension or length did not match its contract.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An index was outside its valid range.
    #[error("{context}: index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        limit: usize,
    },

    /// A value that must be finite overflowed or became NaN.
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    /// A configuration value violated its stated bounds.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A dataset construction constraint cannot be satisfied.
    #[error("infeasible data split: {0}")]
    InfeasibleSplit(String),

    /// An IDX file failed validation.
    #[error("IDX format error in {path} at byte {offset}: {reason}")]
    IdxFormat {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    /// Underlying I/O failure, annotated with the path involved.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An inner operation failed during a federation round.
    #[error("round error at device {device}, cluster {cluster}: {source}")]
    Round {
        device: usize,
        cluster: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Annotate an error with the device/cluster position it occurred at.
    pub fn at_round_position(self, device: usize, cluster: usize) -> Error {
        Error::Round {
            device,
            cluster,
            source: Box::new(self),
        }
    }

    /// True for errors caused by a bad experiment configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidConfig(_))
    }

    /// True for errors caused by unreadable or malformed data files.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::IdxFormat { .. } | Error::Io { .. } | Error::InfeasibleSplit(_)
        )
    }
}
