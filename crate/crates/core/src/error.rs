use std::path::PathBuf;

use thiserror::Error;

use crate::model::Nu;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field coefficient at nu={nu}: {relation}")]
    Validation { nu: Nu, relation: String },

    #[error("omega is rationally dependent: omega . nu = 0 at nu={0}")]
    RationalDependence(Nu),

    #[error("small divisor {divisor:e} below floor at nu={nu} (component {j})")]
    SmallDivisor { nu: Nu, j: u8, divisor: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("enumeration budget exceeded: {what} (limit {limit})")]
    Budget { what: String, limit: usize },

    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
