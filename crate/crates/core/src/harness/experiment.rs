//! Turns a [`RunConfig`] into a federation and runs it.

use rand::seq::SliceRandom;

use super::config::{DatasetSource, RunConfig};
use super::equivalence::{check_equivalence, EquivalenceReport};
use super::idx::load_idx_dataset;
use super::synthetic::make_synthetic;
use crate::data::{partition_iid, DataError};
use crate::protocol::training::{run_training, Federation, RunMode, TrainingOutput};
use crate::randomness::{stream_rng, Domain};
use crate::Result;

/// Builds the client datasets and test set described by `cfg`.
pub fn build_federation(cfg: &RunConfig) -> Result<Federation> {
    let spec = cfg.model_spec();
    match &cfg.dataset {
        DatasetSource::Synthetic {
            per_client,
            test_size,
            spread,
        } => {
            let data = make_synthetic(
                spec.output_dim(),
                spec.input_dim(),
                cfg.clients,
                *per_client,
                *test_size,
                *spread,
                cfg.seed,
            );
            Ok(Federation {
                clients: data.clients,
                test: data.test,
            })
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
            holdout,
        } => {
            let all = load_idx_dataset(train_images, train_labels, None)?;
            // files are often sorted by label, so shuffle before any cut
            let mut order: Vec<usize> = (0..all.len()).collect();
            order.shuffle(&mut stream_rng(cfg.seed, Domain::Shuffle, u64::MAX));
            let (train_idx, held) = order.split_at(all.len().saturating_sub(*holdout));
            let train_idx = &train_idx[..train_limit.unwrap_or(usize::MAX).min(train_idx.len())];
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => load_idx_dataset(i, l, *test_limit)?,
                _ => {
                    let held = &held[..test_limit.unwrap_or(usize::MAX).min(held.len())];
                    if held.is_empty() {
                        return Err(DataError::Empty.into());
                    }
                    all.subset(held)
                }
            };
            let parts = partition_iid(train_idx.len(), cfg.clients, cfg.seed)?;
            let clients = parts
                .iter()
                .map(|p| {
                    let idx: Vec<usize> = p.iter().map(|&i| train_idx[i]).collect();
                    all.subset(&idx)
                })
                .collect();
            Ok(Federation { clients, test })
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub output: TrainingOutput,
    /// Present for dual runs.
    pub equivalence: Option<EquivalenceReport>,
    pub wall_ms: f64,
}

pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    let start = std::time::Instant::now();
    let fed = build_federation(cfg)?;
    let output = run_training(&cfg.training_config(), &fed)?;
    let equivalence = match (cfg.mode, &output.keys) {
        (RunMode::Dual, Some(keys)) => Some(check_equivalence(
            &output.plain_trace,
            &output.sifl_trace,
            keys,
            cfg.threshold,
        )?),
        _ => None,
    };
    Ok(Experiment {
        output,
        equivalence,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
