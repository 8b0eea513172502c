//! The untrusted aggregator.
//!
//! This module deliberately depends only on transmission-coordinate vectors:
//! nothing here can reach a key set or produce a plain parameter vector.

use std::collections::BTreeMap;

use crate::model::EncryptedParamVector;
use crate::protocol::{ClientUpdate, ProtocolError};

/// `Σ (|D_i| / |D|) · w̃_i`, evaluated as `(Σ |D_i|·w̃_i) / |D|` in the order
/// given.
pub fn aggregate(
    updates: &[EncryptedParamVector],
    sizes: &[u64],
) -> Result<EncryptedParamVector, ProtocolError> {
    let first = updates.first().ok_or(ProtocolError::NoUpdates)?;
    if updates.len() != sizes.len() {
        return Err(ProtocolError::Aggregation(format!(
            "{} updates but {} sizes",
            updates.len(),
            sizes.len()
        )));
    }
    let (round, dim) = (first.round(), first.len());
    for (i, u) in updates.iter().enumerate() {
        if u.round() != round {
            return Err(ProtocolError::Aggregation(format!(
                "update {i} is for round {}, expected {round}",
                u.round()
            )));
        }
        if u.len() != dim {
            return Err(ProtocolError::Aggregation(format!(
                "update {i} has dimension {}, expected {dim}",
                u.len()
            )));
        }
        if sizes[i] == 0 {
            return Err(ProtocolError::Aggregation(format!("update {i} has size 0")));
        }
    }
    let mut sum = vec![0.0; dim];
    for (u, &s) in updates.iter().zip(sizes) {
        let s = s as f64;
        for (acc, &v) in sum.iter_mut().zip(u.values()) {
            *acc += s * v;
        }
    }
    let total = sizes.iter().sum::<u64>() as f64;
    sum.iter_mut().for_each(|v| *v /= total);
    Ok(EncryptedParamVector::new(sum, round))
}

/// Output of one aggregation round.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedModel {
    pub model: EncryptedParamVector,
    /// Size-weighted mean of the clients' local losses.
    pub train_loss: f64,
    pub total_size: u64,
}

/// Buffers one round's client updates and sums them in ascending client-id
/// order once the roster is complete, so arrival order never changes the
/// floating-point result.
#[derive(Debug)]
pub struct Aggregator {
    round: u32,
    roster: Vec<u16>,
    pending: BTreeMap<u16, ClientUpdate>,
}

impl Aggregator {
    pub fn new(round: u32, roster: &[u16]) -> Result<Self, ProtocolError> {
        let mut ids = roster.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != roster.len() || ids.contains(&0) || ids.is_empty() {
            return Err(ProtocolError::Roster(roster.to_vec()));
        }
        Ok(Self {
            round,
            roster: ids,
            pending: BTreeMap::new(),
        })
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn submit(&mut self, update: ClientUpdate) -> Result<(), ProtocolError> {
        let id = update.client_id;
        if self.roster.binary_search(&id).is_err() {
            return Err(ProtocolError::UnknownClient(id));
        }
        if update.round() != self.round {
            return Err(ProtocolError::RoundMismatch {
                client: id,
                expected: self.round,
                got: update.round(),
            });
        }
        if update.size == 0 {
            return Err(ProtocolError::EmptyClient { client: id });
        }
        if let Some(other) = self.pending.values().next() {
            if other.model.len() != update.model.len() {
                return Err(ProtocolError::DimensionMismatch {
                    client: id,
                    expected: other.model.len(),
                    got: update.model.len(),
                });
            }
        }
        if self.pending.contains_key(&id) {
            return Err(ProtocolError::DuplicateUpdate(id));
        }
        self.pending.insert(id, update);
        Ok(())
    }

    /// Client ids still owed an update.
    pub fn missing(&self) -> Vec<u16> {
        self.roster
            .iter()
            .copied()
            .filter(|id| !self.pending.contains_key(id))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.pending.len() == self.roster.len()
    }

    pub fn finish(self) -> Result<AggregatedModel, ProtocolError> {
        let missing = self.missing();
        if !missing.is_empty() {
            return Err(ProtocolError::MissingUpdates {
                round: self.round,
                clients: missing,
            });
        }
        // BTreeMap iteration is ascending by client id.
        let (models, sizes): (Vec<EncryptedParamVector>, Vec<u64>) = self
            .pending
            .values()
            .map(|u| (u.model.clone(), u.size))
            .unzip();
        let model = aggregate(&models, &sizes)?;
        let total_size: u64 = sizes.iter().sum();
        let train_loss = self
            .pending
            .values()
            .map(|u| u.size as f64 * u.train_loss)
            .sum::<f64>()
            / total_size as f64;
        Ok(AggregatedModel {
            model,
            train_loss,
            total_size,
        })
    }
}
