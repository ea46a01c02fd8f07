use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad trace header: {0}")]
    BadHeader(String),
    #[error("truncated trace: header announces {expected} records, file holds {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("malformed record {index}: {reason}")]
    Malformed { index: u64, reason: String },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("request segment {request_id} has no REQ_END")]
    UnterminatedRequest { request_id: u64 },
    #[error("records out of order: {0}")]
    OutOfOrder(String),
    #[error("{0}")]
    Runtime(String),
}
