//! The three roles of a SIFL federation and the round loop that drives them.
//!
//! * The **server** holds the key set, draws `Rᵗ`, broadcasts
//!   `w̃ᵗ = G·wᵗ + N·Rᵗ`, decrypts the aggregate with `M` and evaluates it.
//! * **Clients** run the immersed SGD on `w̃ᵗ` with their private data.
//! * The **aggregator** sees only transmission-coordinate vectors and
//!   dataset sizes, and returns their size-weighted mean.
//!
//! Every client's update carries the same `N·Rᵗ`, inherited from the
//! broadcast and left untouched by the dynamics; because the aggregation
//! weights sum to one, the aggregate carries it with coefficient one and `M`
//! removes it.
//!
//! The aggregator learns each `|D_i|` (needed for the weights) and each
//! client's mean local loss.

pub mod aggregator;
pub mod client;
pub mod server;
pub mod simulator;
pub mod socket;
pub mod training;
pub mod wire;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::data::Dataset;
use crate::model::EncryptedParamVector;

pub use aggregator::{aggregate, AggregatedModel, Aggregator};
pub use client::ClientNode;
pub use server::{Codec, RoundResult, Server};
pub use simulator::SimulatedTransport;
pub use socket::SocketTransport;
pub use training::{run_training, Federation, TrainingConfig, TrainingOutput, TransportKind};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("round {round}: no update from client(s) {clients:?}")]
    MissingUpdates { round: u32, clients: Vec<u16> },
    #[error("update from client {client} is for round {got}, aggregator is on round {expected}")]
    RoundMismatch {
        client: u16,
        expected: u32,
        got: u32,
    },
    #[error("update from client {client} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        client: u16,
        expected: usize,
        got: usize,
    },
    #[error("client {0} is not on the roster")]
    UnknownClient(u16),
    #[error("duplicate update from client {0}")]
    DuplicateUpdate(u16),
    #[error("client {client} reported dataset size 0")]
    EmptyClient { client: u16 },
    #[error("nothing to aggregate")]
    NoUpdates,
    #[error("{0}")]
    Aggregation(String),
    #[error("round {round} is outside 0..{rounds}")]
    RoundOutOfRange { round: u32, rounds: usize },
    #[error("client ids must be unique and non-zero, got {0:?}")]
    Roster(Vec<u16>),
    #[error("unexpected {got} message (expected {expected})")]
    Unexpected { expected: &'static str, got: String },
    #[error("{role} failed: {reason}")]
    Peer { role: String, reason: String },
}

/// Transmission mode of one federation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Standard FedAvg; the transmission map is the identity.
    Plain,
    /// Immersion encryption.
    Sifl,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Sifl => "sifl",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Mode::Plain),
            "sifl" => Ok(Mode::Sifl),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// A client's identity and private data. Ids start at 1; 0 is reserved for
/// the server and aggregator on the wire.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: u16,
    pub dataset: Dataset,
}

impl ClientState {
    pub fn size(&self) -> usize {
        self.dataset.len()
    }
}

/// What a client hands to the aggregator after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: u16,
    pub size: u64,
    pub train_loss: f64,
    pub model: EncryptedParamVector,
}

impl ClientUpdate {
    pub fn round(&self) -> u32 {
        self.model.round()
    }
}

/// Per-round metrics for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub mode: Mode,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub t_encrypt_ms: f64,
    pub t_decrypt_ms: f64,
    pub t_train_ms: f64,
    pub equivalence_rel_err: Option<f64>,
}

impl RoundRecord {
    /// Field-by-field equality ignoring the three timing columns. Reals are
    /// compared bitwise.
    pub fn same_outcome(&self, other: &RoundRecord) -> bool {
        self.round == other.round
            && self.mode == other.mode
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.test_accuracy.to_bits() == other.test_accuracy.to_bits()
            && self.equivalence_rel_err.map(f64::to_bits)
                == other.equivalence_rel_err.map(f64::to_bits)
    }
}
