use thiserror::Error;

use crate::data::DataError;
use crate::harness::config::ConfigError;
use crate::keys::KeyError;
use crate::model::ModelError;
use crate::protocol::wire::WireError;
use crate::protocol::ProtocolError;
use crate::randomness::FreshnessError;
use crate::sgd::SgdError;

/// Crate-level error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Freshness(#[from] FreshnessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sgd(#[from] SgdError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace length mismatch: {plain} plain rounds vs {sifl} sifl rounds")]
    TraceLength { plain: usize, sifl: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
