use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::keys::KeySet;
use crate::model::EncryptedParamVector;
use crate::par;
use crate::protocol::server::RoundTransport;
use crate::protocol::{AggregatedModel, Aggregator, ClientNode};
use crate::randomness::{stream_rng, Domain};
use crate::Result;

/// Order in which finished client updates reach the aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrival {
    ById,
    Reversed,
    Shuffled(u64),
}

/// All roles in one process. Clients train concurrently (via [`par`]); the
/// aggregator receives their updates in the configured arrival order.
#[derive(Debug)]
pub struct SimulatedTransport {
    clients: Vec<ClientNode>,
    arrival: Arrival,
}

impl SimulatedTransport {
    pub fn new(clients: Vec<ClientNode>) -> Self {
        Self {
            clients,
            arrival: Arrival::ById,
        }
    }

    pub fn with_arrival(mut self, arrival: Arrival) -> Self {
        self.arrival = arrival;
        self
    }

    pub fn clients(&self) -> &[ClientNode] {
        &self.clients
    }

    pub fn clients_mut(&mut self) -> &mut [ClientNode] {
        &mut self.clients
    }
}

impl RoundTransport for SimulatedTransport {
    fn handshake(&mut self, keys: Option<&Arc<KeySet>>) -> Result<()> {
        for c in &mut self.clients {
            c.handshake(keys.cloned());
        }
        Ok(())
    }

    fn exchange(&mut self, global: &EncryptedParamVector) -> Result<AggregatedModel> {
        let ids: Vec<u16> = self.clients.iter().map(ClientNode::id).collect();
        let mut aggregator = Aggregator::new(global.round(), &ids)?;
        let mut results = par::map(&self.clients, |c| {
            (!c.is_silent()).then(|| c.update(global))
        });
        let mut order: Vec<usize> = (0..results.len()).collect();
        match self.arrival {
            Arrival::ById => {}
            Arrival::Reversed => order.reverse(),
            Arrival::Shuffled(seed) => order.shuffle(&mut stream_rng(
                seed,
                Domain::Shuffle,
                u64::from(global.round()),
            )),
        }
        for i in order {
            if let Some(update) = results[i].take() {
                aggregator.submit(update?)?;
            }
        }
        Ok(aggregator.finish()?)
    }

    fn shutdown(&mut self) -> Result<()> {
        Ok(())
    }
}
