// Shared fixtures; each test binary uses a subset.
#![allow(dead_code)]

use sifl::data::{Dataset, MiniBatch};
use sifl::harness::make_synthetic;
use sifl::model::ModelSpec;
use sifl::protocol::training::RunMode;
use sifl::protocol::{Federation, TrainingConfig};
use sifl::sgd::Hyperparams;

/// Finite-difference gradient of `f` at `w` with central step `h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    let mut x = w.to_vec();
    (0..w.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn batch_from(values: &[f64], dim: usize, classes: usize) -> MiniBatch {
    let n = values.len() / dim;
    let labels = (0..n).map(|i| i % classes).collect();
    MiniBatch::new(values[..n * dim].to_vec(), dim, labels).unwrap()
}

pub fn synthetic_federation(clients: usize, per_client: usize, seed: u64) -> Federation {
    let d = make_synthetic(3, 8, clients, per_client, 120, 1.0, seed);
    Federation {
        clients: d.clients,
        test: d.test,
    }
}

pub fn small_config(mode: RunMode, rounds: usize, seed: u64) -> TrainingConfig {
    let hyper = Hyperparams {
        lr: 0.05,
        local_epochs: 2,
        rounds,
        batch_size: 16,
    };
    let mut cfg = TrainingConfig::new(mode, ModelSpec::new(vec![8, 16, 3]).unwrap(), hyper, seed);
    cfg.block_max = 64;
    cfg
}

pub fn dataset(values: Vec<f64>, dim: usize, labels: Vec<usize>) -> Dataset {
    Dataset::new(values, dim, labels).unwrap()
}
