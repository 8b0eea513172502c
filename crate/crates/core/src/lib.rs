//! System-immersion federated learning.
//!
//! Clients run SGD on parameters that were lifted into a higher-dimensional
//! space by a random affine map `w ↦ G·w + N·R`. The lifted ("target")
//! dynamics `w̃ ← w̃ − η·G·∇l(M·w̃)` track plain SGD exactly, an untrusted
//! aggregator averages the lifted updates, and the server recovers the
//! FedAvg model with the left inverse `M`.
//!
//! Module map:
//!
//! * [`keys`] and [`randomness`]: key generation, encryption/decryption, and
//!   the per-round kernel randomness with its freshness log.
//! * [`model`], [`data`] and [`sgd`]: the MLP, its loss/gradient, and the
//!   plain and immersed local SGD.
//! * [`protocol`]: server, aggregator and client roles, the wire format, and
//!   the in-process and TCP transports.
//! * [`harness`]: configuration, dataset ingestion, equivalence checking and
//!   CSV metrics.
//!
//! Data-parallel loops (per-block key algebra, per-client local training) go
//! through [`par`], which uses rayon when the `parallel` feature is on and
//! plain iterators otherwise.

// `!(x <= limit)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod harness;
pub mod keys;
pub mod linalg;
pub mod model;
pub mod par;
pub mod protocol;
pub mod randomness;
pub mod sgd;

mod error;

pub use error::{Error, Result};
pub use keys::{ImmersionKey, KeyError, KeySet};
pub use model::{EncryptedParamVector, ModelSpec, ParamVector};
pub use randomness::{RandomnessSource, RoundRandomness};
