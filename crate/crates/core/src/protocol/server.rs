use std::sync::Arc;
use std::time::Instant;

use crate::data::Dataset;
use crate::keys::KeySet;
use crate::model::{EncryptedParamVector, Mlp, ParamVector};
use crate::protocol::{AggregatedModel, Mode, ProtocolError, RoundRecord};
use crate::randomness::{RandomnessSource, RoundRandomness};
use crate::Result;

/// Moves the server's model to and from transmission coordinates.
#[derive(Debug)]
pub enum Codec {
    /// Identity: standard FedAvg.
    Plain,
    /// `π(w) = G·w + N·Rᵗ` with fresh `Rᵗ` every round, `π^L = M`.
    Immersion {
        keys: Arc<KeySet>,
        randomness: RandomnessSource,
    },
}

impl Codec {
    pub fn mode(&self) -> Mode {
        match self {
            Codec::Plain => Mode::Plain,
            Codec::Immersion { .. } => Mode::Sifl,
        }
    }

    pub fn keys(&self) -> Option<&Arc<KeySet>> {
        match self {
            Codec::Plain => None,
            Codec::Immersion { keys, .. } => Some(keys),
        }
    }

    fn encode(
        &self,
        w: &ParamVector,
        round: u32,
    ) -> Result<(EncryptedParamVector, Option<RoundRandomness>)> {
        match self {
            Codec::Plain => Ok((EncryptedParamVector::new(w.values().to_vec(), round), None)),
            Codec::Immersion { keys, randomness } => {
                let rr = randomness.fresh(keys, round)?;
                let enc = keys.encrypt(w, &rr)?;
                Ok((enc, Some(rr)))
            }
        }
    }

    fn decode(&self, w: &EncryptedParamVector) -> Result<ParamVector> {
        match self {
            Codec::Plain => Ok(ParamVector::new(w.values().to_vec())?),
            Codec::Immersion { keys, .. } => Ok(keys.decrypt(w)?),
        }
    }
}

/// Carries one round between the server and the aggregator.
pub trait RoundTransport {
    /// Delivers the key set (or nothing, for the plain baseline) to every
    /// client.
    fn handshake(&mut self, keys: Option<&Arc<KeySet>>) -> Result<()>;

    /// Broadcasts `global` and returns the aggregate of all client updates.
    fn exchange(&mut self, global: &EncryptedParamVector) -> Result<AggregatedModel>;

    fn shutdown(&mut self) -> Result<()>;
}

/// Everything one server round produced.
#[derive(Debug, Clone)]
pub struct RoundResult {
    pub record: RoundRecord,
    /// The decrypted global model `wᵗ⁺¹`.
    pub global: ParamVector,
    pub broadcast: EncryptedParamVector,
    pub aggregate: EncryptedParamVector,
    pub randomness: Option<RoundRandomness>,
}

/// The server role.
#[derive(Debug)]
pub struct Server {
    codec: Codec,
    model: Arc<Mlp>,
    global: ParamVector,
    test: Dataset,
    rounds: usize,
}

impl Server {
    pub fn new(
        codec: Codec,
        model: Arc<Mlp>,
        init: ParamVector,
        test: Dataset,
        rounds: usize,
    ) -> Self {
        Self {
            codec,
            model,
            global: init,
            test,
            rounds,
        }
    }

    pub fn mode(&self) -> Mode {
        self.codec.mode()
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    /// Current plain global model `wᵗ`.
    pub fn global(&self) -> &ParamVector {
        &self.global
    }

    /// One global round: draw `Rᵗ`, broadcast `π(wᵗ)`, collect the
    /// aggregate, decrypt it to `wᵗ⁺¹` and evaluate on the test set.
    pub fn round(&mut self, t: u32, transport: &mut dyn RoundTransport) -> Result<RoundResult> {
        if t as usize >= self.rounds {
            return Err(ProtocolError::RoundOutOfRange {
                round: t,
                rounds: self.rounds,
            }
            .into());
        }
        let start = Instant::now();
        let (broadcast, randomness) = self.codec.encode(&self.global, t)?;
        let t_encrypt_ms = ms_since(start);

        let start = Instant::now();
        let agg = transport.exchange(&broadcast)?;
        let t_train_ms = ms_since(start);
        if agg.model.round() != t {
            return Err(ProtocolError::Unexpected {
                expected: "aggregate for the current round",
                got: format!("round {}", agg.model.round()),
            }
            .into());
        }

        let start = Instant::now();
        let next = self.codec.decode(&agg.model)?;
        let t_decrypt_ms = ms_since(start);

        let (_, test_accuracy) = self.model.evaluate(next.values(), &self.test)?;
        self.global = next.clone();
        Ok(RoundResult {
            record: RoundRecord {
                round: t,
                mode: self.codec.mode(),
                train_loss: agg.train_loss,
                test_accuracy,
                t_encrypt_ms,
                t_decrypt_ms,
                t_train_ms,
                equivalence_rel_err: None,
            },
            global: next,
            broadcast,
            aggregate: agg.model,
            randomness,
        })
    }
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}
