use std::sync::Arc;

use crate::keys::{KeyError, KeySet};
use crate::model::{EncryptedParamVector, Mlp, ParamVector};
use crate::protocol::{ClientState, ClientUpdate};
use crate::randomness::{derive_seed, Domain};
use crate::sgd::{client_update, Hyperparams, LocalModel, LocalOutcome, SgdError};

/// Batch-shuffle seed for one client in one round. Shared by both modes so a
/// plain and an immersed client see the same batch sequence.
pub fn shuffle_seed(run_seed: u64, round: u32, client_id: u16) -> u64 {
    let base = derive_seed(run_seed, Domain::Shuffle as u64);
    derive_seed(base, (u64::from(round) << 16) | u64::from(client_id))
}

/// The client role: private data plus whatever the handshake delivered.
#[derive(Debug, Clone)]
pub struct ClientNode {
    state: ClientState,
    model: Arc<Mlp>,
    hyper: Hyperparams,
    run_seed: u64,
    keys: Option<Arc<KeySet>>,
    silent: bool,
}

impl ClientNode {
    pub fn new(state: ClientState, model: Arc<Mlp>, hyper: Hyperparams, run_seed: u64) -> Self {
        Self {
            state,
            model,
            hyper,
            run_seed,
            keys: None,
            silent: false,
        }
    }

    pub fn id(&self) -> u16 {
        self.state.id
    }

    pub fn size(&self) -> usize {
        self.state.size()
    }

    /// A silent client receives broadcasts but never answers. Used to
    /// exercise the missing-update path.
    pub fn set_silent(&mut self, silent: bool) {
        self.silent = silent;
    }

    pub fn is_silent(&self) -> bool {
        self.silent
    }

    /// Installs the key set (SIFL) or clears it (plain baseline).
    pub fn handshake(&mut self, keys: Option<Arc<KeySet>>) {
        self.keys = keys;
    }

    /// Handshake from a `KEYSET` payload; an empty blob selects the plain
    /// baseline.
    pub fn handshake_bytes(&mut self, blob: &[u8]) -> Result<(), KeyError> {
        self.keys = if blob.is_empty() {
            None
        } else {
            Some(Arc::new(KeySet::from_bytes(blob)?))
        };
        Ok(())
    }

    pub fn keys(&self) -> Option<&Arc<KeySet>> {
        self.keys.as_ref()
    }

    /// Runs local training starting from the broadcast `global`.
    pub fn update(&self, global: &EncryptedParamVector) -> Result<ClientUpdate, SgdError> {
        let round = global.round();
        let init = match &self.keys {
            Some(_) => LocalModel::Encrypted(global.clone()),
            None => LocalModel::Plain(ParamVector::new(global.values().to_vec())?),
        };
        let out = self.train(init, round)?;
        let model = match out.model {
            LocalModel::Encrypted(w) => w,
            LocalModel::Plain(w) => EncryptedParamVector::new(w.into_values(), round),
        };
        Ok(ClientUpdate {
            client_id: self.state.id,
            size: self.state.size() as u64,
            train_loss: out.mean_loss,
            model,
        })
    }

    /// Local training from an explicit starting point, with this client's
    /// batch schedule for `round`.
    pub fn train(&self, init: LocalModel, round: u32) -> Result<LocalOutcome, SgdError> {
        client_update(
            self.model.as_ref(),
            init,
            &self.state.dataset,
            &self.hyper,
            self.keys.as_deref(),
            shuffle_seed(self.run_seed, round, self.state.id),
        )
    }
}
