//! Experiment harness: configuration, datasets, equivalence checks and
//! metrics output.

pub mod config;
pub mod equivalence;
pub mod experiment;
pub mod idx;
pub mod metrics;
pub mod synthetic;

pub use config::{load_config, RunConfig};
pub use equivalence::{check_equivalence, EquivalenceReport};
pub use experiment::{build_federation, run_experiment, Experiment};
pub use idx::load_idx_dataset;
pub use metrics::{write_metrics, write_metrics_file};
pub use synthetic::make_synthetic;
