//! Local SGD in plain and immersed coordinates.
//!
//! Plain step: `w ← w − η·∇l(w, X)`.
//! Immersed (target) step: `w̃ ← w̃ − η·G·∇l(M·w̃, X)`.
//!
//! If `w̃ = G·w + N·R` then `M·w̃ = w`, so the immersed step evaluates the
//! same gradient as the plain one and moves `w̃` by `G` times the plain move.
//! The kernel part `(I − G·M)·w̃ = N·R` is never touched.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::data::{epoch_batches, Dataset, MiniBatch};
use crate::keys::{KeyError, KeySet};
use crate::model::{EncryptedParamVector, Mlp, ModelError, ParamVector};

#[derive(Debug, Error, PartialEq)]
pub enum SgdError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("local dataset is empty")]
    EmptyDataset,
    #[error("encrypted local update needs a key set")]
    MissingKeys,
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
}

/// A differentiable training loss over flat parameter vectors.
pub trait Objective: Sync {
    fn loss_and_gradient(
        &self,
        w: &[f64],
        batch: &MiniBatch,
    ) -> Result<(f64, Vec<f64>), ModelError>;
}

impl Objective for Mlp {
    fn loss_and_gradient(
        &self,
        w: &[f64],
        batch: &MiniBatch,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        Mlp::loss_and_gradient(self, w, batch)
    }
}

/// Learning rate, local epochs `K`, global rounds `T` and batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub lr: f64,
    pub local_epochs: usize,
    pub rounds: usize,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr: 0.01,
            local_epochs: 2,
            rounds: 30,
            batch_size: 32,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), SgdError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SgdError::Hyperparams(format!(
                "lr must be > 0, got {}",
                self.lr
            )));
        }
        if self.local_epochs == 0 || self.rounds == 0 || self.batch_size == 0 {
            return Err(SgdError::Hyperparams(
                "local_epochs, rounds and batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn step_plain<O: Objective + ?Sized>(
    obj: &O,
    w: &mut [f64],
    batch: &MiniBatch,
    lr: f64,
) -> Result<f64, SgdError> {
    let (loss, g) = obj.loss_and_gradient(w, batch)?;
    for (wi, gi) in w.iter_mut().zip(&g) {
        *wi -= lr * gi;
    }
    Ok(loss)
}

fn step_immersed<O: Objective + ?Sized>(
    obj: &O,
    keys: &KeySet,
    w: &mut [f64],
    batch: &MiniBatch,
    lr: f64,
) -> Result<f64, SgdError> {
    let plain_point = keys.decrypt_slice(w)?;
    let (loss, g) = obj.loss_and_gradient(&plain_point, batch)?;
    keys.add_lifted(-lr, &g, w)?;
    Ok(loss)
}

/// `w − η·∇l(w, batch)`.
pub fn plain_sgd_step<O: Objective + ?Sized>(
    obj: &O,
    w: &ParamVector,
    batch: &MiniBatch,
    lr: f64,
) -> Result<ParamVector, SgdError> {
    let mut out = w.values().to_vec();
    step_plain(obj, &mut out, batch, lr)?;
    Ok(ParamVector::new(out)?)
}

/// `w̃ − η·G·∇l(M·w̃, batch)`, blockwise over `keys`.
pub fn encrypted_sgd_step<O: Objective + ?Sized>(
    obj: &O,
    keys: &KeySet,
    w: &EncryptedParamVector,
    batch: &MiniBatch,
    lr: f64,
) -> Result<EncryptedParamVector, SgdError> {
    let mut out = w.clone();
    step_immersed(obj, keys, out.values_mut(), batch, lr)?;
    Ok(out)
}

/// Starting point (and result) of a client's local training.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalModel {
    Plain(ParamVector),
    Encrypted(EncryptedParamVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub model: LocalModel,
    /// Mean mini-batch loss over every local step.
    pub mean_loss: f64,
    pub steps: usize,
}

/// Runs `K` epochs over seeded, reshuffled mini-batches of `data`, applying
/// the step matching `init`'s coordinates. The batch schedule depends only
/// on `shuffle_seed`, so both modes see identical batches.
pub fn client_update<O: Objective + ?Sized>(
    obj: &O,
    init: LocalModel,
    data: &Dataset,
    hyper: &Hyperparams,
    keys: Option<&KeySet>,
    shuffle_seed: u64,
) -> Result<LocalOutcome, SgdError> {
    if data.is_empty() {
        return Err(SgdError::EmptyDataset);
    }
    hyper.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(shuffle_seed);
    let (mut values, round, keys) = match &init {
        LocalModel::Plain(w) => (w.values().to_vec(), None, None),
        LocalModel::Encrypted(w) => {
            let keys = keys.ok_or(SgdError::MissingKeys)?;
            if w.len() != keys.immersed_dim() {
                return Err(KeyError::DimensionMismatch {
                    what: "immersed parameter vector",
                    expected: keys.immersed_dim(),
                    actual: w.len(),
                }
                .into());
            }
            (w.values().to_vec(), Some(w.round()), Some(keys))
        }
    };
    let (mut loss_sum, mut steps) = (0.0, 0usize);
    for _ in 0..hyper.local_epochs {
        for idx in epoch_batches(data.len(), hyper.batch_size, &mut rng) {
            let batch = data.batch(&idx);
            let loss = match keys {
                None => step_plain(obj, &mut values, &batch, hyper.lr)?,
                Some(k) => step_immersed(obj, k, &mut values, &batch, hyper.lr)?,
            };
            loss_sum += loss;
            steps += 1;
        }
    }
    let model = match round {
        None => LocalModel::Plain(ParamVector::new(values)?),
        Some(t) => LocalModel::Encrypted(EncryptedParamVector::new(values, t)),
    };
    Ok(LocalOutcome {
        model,
        mean_loss: loss_sum / steps as f64,
        steps,
    })
}
