mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{small_config, synthetic_federation};
use sifl::keys::KeySet;
use sifl::model::Mlp;
use sifl::protocol::server::RoundTransport;
use sifl::protocol::simulator::Arrival;
use sifl::protocol::training::RunMode;
use sifl::protocol::{
    run_training, ClientNode, Codec, Mode, ProtocolError, Server, SimulatedTransport,
    SocketTransport, TransportKind,
};
use sifl::randomness::RandomnessSource;
use sifl::Error;

fn socket(cfg: &mut sifl::protocol::TrainingConfig) {
    cfg.transport = TransportKind::Socket {
        listen: "127.0.0.1:0".into(),
        timeout: Duration::from_secs(30),
    };
}

#[test]
fn socket_matches_simulator_all_modes() {
    let fed = synthetic_federation(3, 40, 2);
    for mode in [RunMode::Plain, RunMode::Sifl, RunMode::Dual] {
        let sim = run_training(&small_config(mode, 4, 8), &fed).unwrap();
        let mut cfg = small_config(mode, 4, 8);
        socket(&mut cfg);
        let net = run_training(&cfg, &fed).unwrap();
        assert_eq!(sim.records.len(), net.records.len());
        for (a, b) in sim.records.iter().zip(&net.records) {
            assert!(a.same_outcome(b), "{mode:?}: {a:?} vs {b:?}");
        }
        assert_eq!(sim.plain_trace, net.plain_trace);
        assert_eq!(sim.sifl_trace, net.sifl_trace);
    }
}

#[test]
fn arrival_order_does_not_change_results() {
    let fed = synthetic_federation(4, 30, 3);
    let cfg = small_config(RunMode::Sifl, 1, 5);
    let keys = Arc::new(cfg.generate_keys().unwrap());
    let model = Arc::new(Mlp::new(cfg.spec.clone()));
    let mut outcomes = Vec::new();
    for arrival in [Arrival::ById, Arrival::Reversed, Arrival::Shuffled(77)] {
        let nodes: Vec<ClientNode> = fed
            .client_states()
            .into_iter()
            .map(|s| ClientNode::new(s, model.clone(), cfg.hyper, cfg.seed))
            .collect();
        let mut transport = SimulatedTransport::new(nodes).with_arrival(arrival);
        let codec = Codec::Immersion {
            keys: keys.clone(),
            randomness: RandomnessSource::new(1, 1.0),
        };
        let mut server = Server::new(
            codec,
            model.clone(),
            cfg.spec.init_params(0),
            fed.test.clone(),
            1,
        );
        transport.handshake(Some(&keys)).unwrap();
        let r = server.round(0, &mut transport).unwrap();
        outcomes.push(
            r.aggregate
                .values()
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(outcomes[0], outcomes[1]);
    assert_eq!(outcomes[0], outcomes[2]);
}

fn silent_client_error(net: bool) -> Error {
    let fed = synthetic_federation(4, 20, 1);
    let mut cfg = small_config(RunMode::Sifl, 1, 0);
    if net {
        cfg.transport = TransportKind::Socket {
            listen: "127.0.0.1:0".into(),
            timeout: Duration::from_millis(1500),
        };
    }
    let keys = Arc::new(cfg.generate_keys().unwrap());
    let model = Arc::new(Mlp::new(cfg.spec.clone()));
    let nodes: Vec<ClientNode> = fed
        .client_states()
        .into_iter()
        .map(|s| {
            let mut n = ClientNode::new(s, model.clone(), cfg.hyper, 0);
            n.set_silent(n.id() == 3);
            n
        })
        .collect();
    let mut transport: Box<dyn RoundTransport> = if net {
        Box::new(
            SocketTransport::launch("127.0.0.1:0", nodes, Duration::from_millis(1500)).unwrap(),
        )
    } else {
        Box::new(SimulatedTransport::new(nodes))
    };
    transport.handshake(Some(&keys)).unwrap();
    let codec = Codec::Immersion {
        keys: keys.clone(),
        randomness: RandomnessSource::new(0, 1.0),
    };
    let mut server = Server::new(codec, model, cfg.spec.init_params(0), fed.test.clone(), 1);
    let err = server.round(0, transport.as_mut()).unwrap_err();
    let _ = transport.shutdown();
    err
}

#[test]
fn silent_client_is_named() {
    for net in [false, true] {
        match silent_client_error(net) {
            Error::Protocol(ProtocolError::MissingUpdates { round: 0, clients }) => {
                assert_eq!(clients, vec![3], "net={net}")
            }
            other => panic!("net={net}: unexpected {other:?}"),
        }
    }
}

#[test]
fn single_client_single_step_is_local_sgd() {
    use sifl::sgd::{plain_sgd_step, Hyperparams};
    let fed = synthetic_federation(1, 24, 6);
    let mut cfg = small_config(RunMode::Dual, 1, 3);
    cfg.hyper = Hyperparams {
        lr: 0.1,
        local_epochs: 1,
        rounds: 1,
        batch_size: 24,
    };
    let out = run_training(&cfg, &fed).unwrap();
    assert_eq!(out.records_for(Mode::Sifl).count(), 1);
    let mlp = Mlp::new(cfg.spec.clone());
    let expected = plain_sgd_step(
        &mlp,
        &cfg.spec.init_params(cfg.seed),
        &fed.clients[0].as_batch(),
        0.1,
    )
    .unwrap();
    // (|D|·w)/|D| can differ from w in the last bit
    let plain_err = sifl::linalg::relative_error(expected.values(), out.plain_trace[0].values());
    assert!(plain_err <= 1e-14, "{plain_err}");
    let keys: &KeySet = out.keys.as_deref().unwrap();
    let dec = keys.decrypt(&out.sifl_trace[0]).unwrap();
    let err = sifl::linalg::relative_error(expected.values(), dec.values());
    assert!(err <= 1e-12, "{err}");
}

#[test]
fn ten_clients_lr_001_k2_is_accepted() {
    use sifl::sgd::Hyperparams;
    let fed = synthetic_federation(10, 12, 4);
    let mut cfg = small_config(RunMode::Sifl, 1, 0);
    cfg.hyper = Hyperparams {
        lr: 0.01,
        local_epochs: 2,
        rounds: 1,
        batch_size: 32,
    };
    let out = run_training(&cfg, &fed).unwrap();
    assert_eq!(out.records.len(), 1);
}
