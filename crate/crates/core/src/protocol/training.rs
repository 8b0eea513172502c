//! The outer loop: `T` global rounds for one or both modes.

use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::data::Dataset;
use crate::keys::KeySet;
use crate::linalg::{l2_distance, l2_norm, relative_error};
use crate::model::{EncryptedParamVector, Mlp, ModelError, ModelSpec, ParamVector};
use crate::protocol::server::RoundTransport;
use crate::protocol::{
    ClientNode, ClientState, Codec, Mode, ProtocolError, RoundRecord, Server, SimulatedTransport,
    SocketTransport,
};
use crate::randomness::{derive_seed, Domain, RandomnessSource, RoundRandomness};
use crate::sgd::{Hyperparams, LocalModel};
use crate::Result;

/// Which federations to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Plain,
    Sifl,
    /// Plain and SIFL in lockstep from the same seeds.
    Dual,
}

impl RunMode {
    pub fn modes(self) -> &'static [Mode] {
        match self {
            RunMode::Plain => &[Mode::Plain],
            RunMode::Sifl => &[Mode::Sifl],
            RunMode::Dual => &[Mode::Plain, Mode::Sifl],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Plain => "plain",
            RunMode::Sifl => "sifl",
            RunMode::Dual => "dual",
        }
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plain" => Ok(RunMode::Plain),
            "sifl" => Ok(RunMode::Sifl),
            "dual" => Ok(RunMode::Dual),
            other => Err(format!("unknown mode {other:?} (plain|sifl|dual)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportKind {
    Simulated,
    /// Aggregator listens on `listen`; peers give up after `timeout`.
    Socket {
        listen: String,
        timeout: Duration,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub mode: RunMode,
    pub spec: ModelSpec,
    pub hyper: Hyperparams,
    pub block_max: usize,
    pub expansion: usize,
    pub seed: u64,
    pub randomness_scale: f64,
    pub transport: TransportKind,
    pub verbosity: u8,
}

impl TrainingConfig {
    pub fn new(mode: RunMode, spec: ModelSpec, hyper: Hyperparams, seed: u64) -> Self {
        Self {
            mode,
            spec,
            hyper,
            block_max: crate::keys::DEFAULT_BLOCK_MAX,
            expansion: crate::keys::DEFAULT_EXPANSION,
            seed,
            randomness_scale: 1.0,
            transport: TransportKind::Simulated,
            verbosity: 0,
        }
    }

    /// The key set a SIFL run with this configuration uses.
    pub fn generate_keys(&self) -> Result<KeySet> {
        Ok(KeySet::for_params(
            self.spec.param_count(),
            self.block_max,
            self.expansion,
            derive_seed(self.seed, Domain::Keys as u64),
        )?)
    }
}

/// Client datasets (client `i` gets id `i + 1`) and the server's test set.
#[derive(Debug, Clone)]
pub struct Federation {
    pub clients: Vec<Dataset>,
    pub test: Dataset,
}

impl Federation {
    pub fn client_states(&self) -> Vec<ClientState> {
        self.clients
            .iter()
            .enumerate()
            .map(|(i, d)| ClientState {
                id: (i + 1) as u16,
                dataset: d.clone(),
            })
            .collect()
    }

    fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.clients.is_empty() || self.clients.len() >= u16::MAX as usize {
            return Err(ProtocolError::Roster(Vec::new()).into());
        }
        for d in self.clients.iter().chain(std::iter::once(&self.test)) {
            if !d.is_empty() && d.dim() != spec.input_dim() {
                return Err(ModelError::InputDimension {
                    expected: spec.input_dim(),
                    actual: d.dim(),
                }
                .into());
            }
            if d.class_count() > spec.output_dim() {
                return Err(ModelError::LabelOutOfRange {
                    label: d.class_count() - 1,
                    classes: spec.output_dim(),
                }
                .into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutput {
    /// One record per round per mode; in dual mode the plain record of a
    /// round precedes the SIFL one.
    pub records: Vec<RoundRecord>,
    /// Plain global model after each round.
    pub plain_trace: Vec<ParamVector>,
    /// SIFL aggregate (immersed coordinates) after each round.
    pub sifl_trace: Vec<EncryptedParamVector>,
    pub keys: Option<Arc<KeySet>>,
    pub keygen_ms: f64,
    /// Per round: relative distance between client 1's immersed update and
    /// the encryption of its plain update from the same start
    /// (verbosity ≥ 2, SIFL only).
    pub local_immersion_errors: Vec<f64>,
}

impl TrainingOutput {
    pub fn records_for(&self, mode: Mode) -> impl Iterator<Item = &RoundRecord> {
        self.records.iter().filter(move |r| r.mode == mode)
    }

    pub fn max_equivalence_error(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.equivalence_rel_err)
            .reduce(f64::max)
    }
}

/// `‖w̃₁ − (G·w₁ + N·Rᵗ)‖ / ‖G·w₁ + N·Rᵗ‖` for one client: the immersed local
/// update against the encrypted plain local update from the same start.
pub fn local_immersion_error(
    node: &ClientNode,
    keys: &KeySet,
    start: &ParamVector,
    rr: &RoundRandomness,
) -> Result<f64> {
    let mut plain_node = node.clone();
    plain_node.handshake(None);
    let mut enc_node = node.clone();
    enc_node.handshake(Some(Arc::new(keys.clone())));
    let round = rr.round();
    let enc_start = keys.encrypt(start, rr)?;
    let enc = enc_node.train(LocalModel::Encrypted(enc_start), round)?;
    let plain = plain_node.train(LocalModel::Plain(start.clone()), round)?;
    let (LocalModel::Encrypted(enc), LocalModel::Plain(plain)) = (enc.model, plain.model) else {
        unreachable!("train keeps the coordinates of its input");
    };
    let expected = keys.encrypt(&plain, rr)?;
    Ok(l2_distance(enc.values(), expected.values())
        / l2_norm(expected.values()).max(f64::MIN_POSITIVE))
}

struct Lane {
    server: Server,
    transport: Box<dyn RoundTransport>,
}

fn client_nodes(cfg: &TrainingConfig, fed: &Federation, model: &Arc<Mlp>) -> Vec<ClientNode> {
    fed.client_states()
        .into_iter()
        .map(|s| ClientNode::new(s, model.clone(), cfg.hyper, cfg.seed))
        .collect()
}

fn make_transport(cfg: &TrainingConfig, nodes: Vec<ClientNode>) -> Result<Box<dyn RoundTransport>> {
    Ok(match &cfg.transport {
        TransportKind::Simulated => Box::new(SimulatedTransport::new(nodes)),
        TransportKind::Socket { listen, timeout } => {
            Box::new(SocketTransport::launch(listen, nodes, *timeout)?)
        }
    })
}

/// Runs `T` rounds. In dual mode both federations advance one round at a
/// time and each round's records carry the relative parameter error
/// `‖w_plain − w_sifl‖₂ / (1 + ‖w_plain‖₂)`.
pub fn run_training(cfg: &TrainingConfig, fed: &Federation) -> Result<TrainingOutput> {
    cfg.hyper.validate()?;
    fed.validate(&cfg.spec)?;
    let model = Arc::new(Mlp::new(cfg.spec.clone()));
    let init = cfg.spec.init_params(cfg.seed);

    let needs_keys = cfg.mode != RunMode::Plain;
    let start = Instant::now();
    let keys = if needs_keys {
        Some(Arc::new(cfg.generate_keys()?))
    } else {
        None
    };
    let keygen_ms = start.elapsed().as_secs_f64() * 1e3;

    let mut lanes = Vec::new();
    for &mode in cfg.mode.modes() {
        let codec = match mode {
            Mode::Plain => Codec::Plain,
            Mode::Sifl => Codec::Immersion {
                keys: keys.clone().expect("keys generated for sifl"),
                randomness: RandomnessSource::new(
                    derive_seed(cfg.seed, Domain::Masking as u64),
                    cfg.randomness_scale,
                ),
            },
        };
        let server = Server::new(
            codec,
            model.clone(),
            init.clone(),
            fed.test.clone(),
            cfg.hyper.rounds,
        );
        let mut transport = make_transport(cfg, client_nodes(cfg, fed, &model))?;
        transport.handshake(server.codec().keys())?;
        lanes.push(Lane { server, transport });
    }

    let probe = (cfg.verbosity >= 2).then(|| client_nodes(cfg, fed, &model).remove(0));
    let mut out = TrainingOutput {
        records: Vec::with_capacity(cfg.hyper.rounds * lanes.len()),
        plain_trace: Vec::new(),
        sifl_trace: Vec::new(),
        keys: keys.clone(),
        keygen_ms,
        local_immersion_errors: Vec::new(),
    };

    let result = (|| -> Result<()> {
        for t in 0..cfg.hyper.rounds as u32 {
            let mut round_records = Vec::with_capacity(lanes.len());
            let mut globals = Vec::with_capacity(lanes.len());
            for lane in lanes.iter_mut() {
                let start_w = lane.server.global().clone();
                let res = lane.server.round(t, lane.transport.as_mut())?;
                match lane.server.mode() {
                    Mode::Plain => out.plain_trace.push(res.global.clone()),
                    Mode::Sifl => {
                        out.sifl_trace.push(res.aggregate.clone());
                        if let (Some(node), Some(keys), Some(rr)) = (&probe, &keys, &res.randomness)
                        {
                            let e = local_immersion_error(node, keys, &start_w, rr)?;
                            log::info!("round {t}: client 1 local immersion error {e:.3e}");
                            out.local_immersion_errors.push(e);
                        }
                    }
                }
                round_records.push(res.record);
                globals.push(res.global);
            }
            if cfg.mode == RunMode::Dual {
                let err = relative_error(globals[0].values(), globals[1].values());
                for r in &mut round_records {
                    r.equivalence_rel_err = Some(err);
                }
            }
            for r in &round_records {
                log::debug!(
                    "round {} [{}] loss {:.6} acc {:.4}",
                    r.round,
                    r.mode,
                    r.train_loss,
                    r.test_accuracy
                );
            }
            out.records.extend(round_records);
        }
        Ok(())
    })();

    let mut shutdown: Result<()> = Ok(());
    for lane in lanes.iter_mut() {
        if let Err(e) = lane.transport.shutdown() {
            shutdown = shutdown.and(Err(e));
        }
    }
    result?;
    shutdown?;
    Ok(out)
}
