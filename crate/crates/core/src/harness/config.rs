//! Flat `key = value` run configuration.
//!
//! ```text
//! # desk-scale synthetic benchmark
//! mode = dual
//! layers = 8,16,3
//! clients = 4
//! lr = 0.05
//! ```
//!
//! `#` starts a comment; blank lines are ignored; unknown keys are errors.
//! Relative dataset paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::model::ModelSpec;
use crate::protocol::training::{RunMode, TrainingConfig, TransportKind};
use crate::sgd::Hyperparams;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Gaussian class blobs in the model's input dimension.
    Synthetic {
        per_client: usize,
        test_size: usize,
        spread: f64,
    },
    /// IDX image/label files. Without test files, the last `holdout`
    /// samples of a seeded shuffle of the training files form the test set.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
        holdout: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: RunMode,
    pub layers: Vec<usize>,
    pub clients: usize,
    pub lr: f64,
    pub local_epochs: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub block_max: usize,
    pub expansion: usize,
    pub seed: u64,
    pub randomness_scale: f64,
    pub dataset: DatasetSource,
    pub output: PathBuf,
    pub threshold: f64,
    pub net: Option<String>,
    pub net_timeout_s: u64,
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Dual,
            layers: vec![8, 16, 3],
            clients: 4,
            lr: 0.01,
            local_epochs: 2,
            rounds: 30,
            batch_size: 32,
            block_max: 256,
            expansion: 1,
            seed: 0,
            randomness_scale: 1.0,
            dataset: DatasetSource::Synthetic {
                per_client: 150,
                test_size: 300,
                spread: 1.0,
            },
            output: PathBuf::from("metrics.csv"),
            threshold: 1e-6,
            net: None,
            net_timeout_s: 600,
            verbosity: 0,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Parse {
        line,
        reason: format!("{key}: {e}"),
    })
}

#[derive(Default)]
struct IdxKeys {
    train_images: Option<PathBuf>,
    train_labels: Option<PathBuf>,
    test_images: Option<PathBuf>,
    test_labels: Option<PathBuf>,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
    holdout: Option<usize>,
}

/// Parses config text; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut source = "synthetic".to_string();
    let (mut per_client, mut test_size, mut spread) = (150usize, 300usize, 1.0f64);
    let mut idx = IdxKeys::default();
    let path = |v: &str| {
        let p = PathBuf::from(v);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            reason: format!("expected `key = value`, got {content:?}"),
        })?;
        let (key, v) = (key.trim(), value.trim());
        match key {
            "mode" => {
                cfg.mode = v
                    .parse()
                    .map_err(|reason| ConfigError::Parse { line, reason })?
            }
            "layers" => {
                cfg.layers = v
                    .split(',')
                    .map(|s| parse::<usize>(line, key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "clients" => cfg.clients = parse(line, key, v)?,
            "lr" => cfg.lr = parse(line, key, v)?,
            "local_epochs" => cfg.local_epochs = parse(line, key, v)?,
            "rounds" => cfg.rounds = parse(line, key, v)?,
            "batch_size" => cfg.batch_size = parse(line, key, v)?,
            "block_max" => cfg.block_max = parse(line, key, v)?,
            "expansion" => cfg.expansion = parse(line, key, v)?,
            "seed" => cfg.seed = parse(line, key, v)?,
            "randomness_scale" => cfg.randomness_scale = parse(line, key, v)?,
            "threshold" => cfg.threshold = parse(line, key, v)?,
            "output" => cfg.output = path(v),
            "net" => cfg.net = Some(v.to_string()),
            "net_timeout_s" => cfg.net_timeout_s = parse(line, key, v)?,
            "verbosity" => cfg.verbosity = parse(line, key, v)?,
            "dataset" => source = v.to_string(),
            "synthetic_per_client" => per_client = parse(line, key, v)?,
            "synthetic_test" => test_size = parse(line, key, v)?,
            "synthetic_spread" => spread = parse(line, key, v)?,
            "train_images" => idx.train_images = Some(path(v)),
            "train_labels" => idx.train_labels = Some(path(v)),
            "test_images" => idx.test_images = Some(path(v)),
            "test_labels" => idx.test_labels = Some(path(v)),
            "train_limit" => idx.train_limit = Some(parse(line, key, v)?),
            "test_limit" => idx.test_limit = Some(parse(line, key, v)?),
            "holdout" => idx.holdout = Some(parse(line, key, v)?),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
    }

    cfg.dataset = match source.as_str() {
        "synthetic" => DatasetSource::Synthetic {
            per_client,
            test_size,
            spread,
        },
        "idx" => {
            let need = |p: Option<PathBuf>, key: &'static str| {
                p.ok_or(ConfigError::Invalid {
                    key,
                    reason: "required when dataset = idx".into(),
                })
            };
            let has_test = idx.test_images.is_some() || idx.test_labels.is_some();
            if has_test && (idx.test_images.is_none() || idx.test_labels.is_none()) {
                return Err(ConfigError::Invalid {
                    key: "test_images",
                    reason: "test_images and test_labels go together".into(),
                });
            }
            DatasetSource::Idx {
                train_images: need(idx.train_images, "train_images")?,
                train_labels: need(idx.train_labels, "train_labels")?,
                test_images: idx.test_images,
                test_labels: idx.test_labels,
                train_limit: idx.train_limit,
                test_limit: idx.test_limit,
                holdout: idx.holdout.unwrap_or(if has_test { 0 } else { 1000 }),
            }
        }
        other => {
            return Err(ConfigError::Invalid {
                key: "dataset",
                reason: format!("unknown source {other:?} (synthetic|idx)"),
            })
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &'static str, v: usize| {
            if v == 0 {
                Err(ConfigError::Invalid {
                    key,
                    reason: "must be at least 1".into(),
                })
            } else {
                Ok(())
            }
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "lr",
                reason: format!("must be > 0, got {}", self.lr),
            });
        }
        positive("clients", self.clients)?;
        positive("local_epochs", self.local_epochs)?;
        positive("rounds", self.rounds)?;
        positive("batch_size", self.batch_size)?;
        positive("block_max", self.block_max)?;
        positive("expansion", self.expansion)?;
        if self.clients >= u16::MAX as usize {
            return Err(ConfigError::Invalid {
                key: "clients",
                reason: "too many clients".into(),
            });
        }
        if !(self.randomness_scale > 0.0 && self.randomness_scale.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "randomness_scale",
                reason: "must be > 0".into(),
            });
        }
        if !(self.threshold >= 0.0) {
            return Err(ConfigError::Invalid {
                key: "threshold",
                reason: "must be >= 0".into(),
            });
        }
        if self.verbosity > 2 {
            return Err(ConfigError::Invalid {
                key: "verbosity",
                reason: "must be 0, 1 or 2".into(),
            });
        }
        ModelSpec::new(self.layers.clone()).map_err(|e| ConfigError::Invalid {
            key: "layers",
            reason: e.to_string(),
        })?;
        if let DatasetSource::Synthetic { per_client, .. } = self.dataset {
            positive("synthetic_per_client", per_client)?;
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.layers.clone()).expect("validated")
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            lr: self.lr,
            local_epochs: self.local_epochs,
            rounds: self.rounds,
            batch_size: self.batch_size,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        let mut t =
            TrainingConfig::new(self.mode, self.model_spec(), self.hyperparams(), self.seed);
        t.block_max = self.block_max;
        t.expansion = self.expansion;
        t.randomness_scale = self.randomness_scale;
        t.verbosity = self.verbosity;
        t.transport = match &self.net {
            None => TransportKind::Simulated,
            Some(listen) => TransportKind::Socket {
                listen: listen.clone(),
                timeout: Duration::from_secs(self.net_timeout_s),
            },
        };
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config(text, Path::new("/cfg"))
    }

    #[test]
    fn hyperparameters_parse() {
        let c = p("lr = 0.01\nlocal_epochs = 2").unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.local_epochs, 2);
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = p("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.lr, c.local_epochs, c.batch_size), (0.01, 2, 32));
        assert_eq!((c.expansion, c.block_max), (1, 256));
    }

    #[test]
    fn negative_lr_names_key() {
        assert!(matches!(
            p("lr = -1"),
            Err(ConfigError::Invalid { key: "lr", .. })
        ));
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            p("# c\nclients = 3\nbogus = 1"),
            Err(ConfigError::UnknownKey {
                line: 3,
                key: "bogus".into()
            })
        );
        assert!(matches!(
            p("\n\nrounds = x"),
            Err(ConfigError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            p("rounds"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            p("layers = 4,2"),
            Err(ConfigError::Invalid { key: "layers", .. })
        ));
    }

    #[test]
    fn idx_source_and_paths() {
        let c = p("dataset = idx # mnist\ntrain_images = a.idx\ntrain_labels = /abs/b.idx\nmode = sifl\nnet = 127.0.0.1:0").unwrap();
        match &c.dataset {
            DatasetSource::Idx {
                train_images,
                train_labels,
                holdout,
                ..
            } => {
                assert_eq!(train_images, &PathBuf::from("/cfg/a.idx"));
                assert_eq!(train_labels, &PathBuf::from("/abs/b.idx"));
                assert_eq!(*holdout, 1000);
            }
            _ => panic!("expected idx"),
        }
        assert_eq!(c.mode, RunMode::Sifl);
        assert!(matches!(
            c.training_config().transport,
            TransportKind::Socket { .. }
        ));
        assert!(p("dataset = idx").is_err());
    }
}
