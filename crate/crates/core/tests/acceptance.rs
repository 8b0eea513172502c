//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.
//!
//! `SIFL_ACCEPTANCE=1,5` restricts the run to the listed criteria.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::{batch_from, central_difference};
use sifl::harness::config::load_config;
use sifl::harness::{build_federation, run_experiment};
use sifl::keys::{generate_key, KeySet};
use sifl::linalg::l2_norm;
use sifl::model::{Mlp, ModelSpec, ParamVector};
use sifl::protocol::training::RunMode;
use sifl::protocol::wire::{decode_message, encode_message, Kind, Message, WireError};
use sifl::protocol::{run_training, Mode, TransportKind};
use sifl::randomness::{FreshnessError, RandomnessSource};
use sifl::sgd::{client_update, encrypted_sgd_step, plain_sgd_step, Hyperparams, LocalModel};

type Outcome = Result<String, String>;
type Criterion = (usize, &'static str, fn() -> Outcome);
type FrameCase = (
    &'static str,
    Result<Message, WireError>,
    fn(&WireError) -> bool,
);

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant) -> Result<f64, String> {
    let s = start.elapsed().as_secs_f64();
    if s < limit.as_secs_f64() {
        Ok(s)
    } else {
        Err(format!("took {s:.2} s, limit {:.0} s", limit.as_secs_f64()))
    }
}

fn key_algebra() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let (mut mg, mut mn, mut rt) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..1000u64 {
        let n = rng.random_range(1..=64);
        let r = rng.random_range(1..=8);
        let key = generate_key(n, r, i).map_err(|e| e.to_string())?;
        let (a, b) = key.identity_residuals();
        mg = mg.max(a);
        mn = mn.max(b);
        let keys = KeySet::from_keys(vec![key]).map_err(|e| e.to_string())?;
        let w = ParamVector::new((0..n).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap();
        let rr = RandomnessSource::new(i, 1.0).draw(r, 0);
        let back = keys.decrypt(&keys.encrypt(&w, &rr).unwrap()).unwrap();
        for (x, y) in w.values().iter().zip(back.values()) {
            rt = rt.max((x - y).abs());
        }
    }
    let secs = within(Duration::from_secs(5), start)?;
    ensure(
        mg <= 1e-9 && mn <= 1e-9 && rt <= 1e-9,
        format!("max |MG-I| {mg:.1e}, |MN| {mn:.1e}, round trip {rt:.1e}; {secs:.2} s"),
    )
}

fn commutation() -> Outcome {
    let start = Instant::now();
    let spec = ModelSpec::new(vec![3, 4, 2]).unwrap();
    let mlp = Mlp::new(spec.clone());
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..200u64 {
        let r = rng.random_range(1..=8);
        let keys = KeySet::for_params(spec.param_count(), 256, r, case).unwrap();
        let w = ParamVector::new(
            (0..spec.param_count())
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        )
        .unwrap();
        let rr =
            RandomnessSource::new(case, rng.random_range(0.1..10.0)).draw(keys.randomness_dim(), 0);
        let samples = rng.random_range(1..=8);
        let inputs: Vec<f64> = (0..samples * 3)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let batch = batch_from(&inputs, 3, 2);
        let lr = rng.random_range(1e-3..0.5);
        let lhs =
            encrypted_sgd_step(&mlp, &keys, &keys.encrypt(&w, &rr).unwrap(), &batch, lr).unwrap();
        let rhs = keys
            .encrypt(&plain_sgd_step(&mlp, &w, &batch, lr).unwrap(), &rr)
            .unwrap();
        let scale = 1.0 + l2_norm(w.values());
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    let secs = within(Duration::from_secs(10), start)?;
    ensure(
        worst <= 1e-8,
        format!("worst |diff|/(1+|w|) {worst:.1e} over 200 cases; {secs:.2} s"),
    )
}

fn kernel_invariance() -> Outcome {
    let spec = ModelSpec::new(vec![8, 16, 3]).unwrap();
    let mlp = Mlp::new(spec.clone());
    let fed = common::synthetic_federation(1, 64, 3);
    let keys = KeySet::for_params(spec.param_count(), 64, 2, 4).unwrap();
    let rr = RandomnessSource::new(9, 5.0).draw(keys.randomness_dim(), 0);
    let start = keys.encrypt(&spec.init_params(1), &rr).unwrap();
    let before = keys.kernel_component(start.values()).unwrap();
    let hyper = Hyperparams {
        lr: 0.05,
        local_epochs: 8,
        rounds: 1,
        batch_size: 64,
    };
    let out = client_update(
        &mlp,
        LocalModel::Encrypted(start),
        &fed.clients[0],
        &hyper,
        Some(&keys),
        0,
    )
    .map_err(|e| e.to_string())?;
    let LocalModel::Encrypted(end) = out.model else {
        return Err("client_update changed coordinates".into());
    };
    let after = keys.kernel_component(end.values()).unwrap();
    let drift = before
        .iter()
        .zip(&after)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(
        drift <= 1e-9,
        format!("max drift {drift:.1e} after {} steps", out.steps),
    )
}

fn gradient_check() -> Outcome {
    let spec = ModelSpec::new(vec![8, 16, 3]).unwrap();
    let mlp = Mlp::new(spec.clone());
    let fed = common::synthetic_federation(1, 12, 5);
    let batch = fed.clients[0].as_batch();
    let w = spec.init_params(6);
    let (_, g) = mlp.loss_and_gradient(w.values(), &batch).unwrap();
    let numeric = central_difference(|x| mlp.forward(x, &batch).unwrap().1, w.values(), 1e-6);
    // coordinates whose gradient is below 1e-6 are compared absolutely
    let worst = g
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max);
    ensure(
        worst <= 1e-4,
        format!(
            "{} parameters, worst relative error {worst:.1e}",
            spec.param_count()
        ),
    )
}

fn parity_checks(
    exp: &sifl::harness::Experiment,
    limit: f64,
) -> Result<(f64, f64, f64, usize), String> {
    let report = exp.equivalence.as_ref().ok_or("no equivalence report")?;
    let plain: Vec<_> = exp.output.records_for(Mode::Plain).collect();
    let sifl: Vec<_> = exp.output.records_for(Mode::Sifl).collect();
    let mismatches = plain
        .iter()
        .zip(&sifl)
        .filter(|(p, s)| p.test_accuracy != s.test_accuracy)
        .count();
    if report.max > limit {
        return Err(format!(
            "max equivalence error {:.1e} > {limit:.0e} (round {:?})",
            report.max, report.offending_round
        ));
    }
    let pa = plain.last().ok_or("no rounds")?.test_accuracy;
    let sa = sifl.last().ok_or("no rounds")?.test_accuracy;
    Ok((report.max, pa, sa, mismatches))
}

fn synthetic_parity() -> Outcome {
    let start = Instant::now();
    let cfg = load_config(&config_path("synthetic.conf")).map_err(|e| e.to_string())?;
    if (
        cfg.clients,
        cfg.layers.as_slice(),
        cfg.local_epochs,
        cfg.rounds,
    ) != (4, &[8, 16, 3][..], 2, 30)
    {
        return Err("synthetic preset drifted from 4 clients, 8-16-3, K=2, T=30".into());
    }
    let exp = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let (max, pa, sa, mismatches) = parity_checks(&exp, 1e-6)?;
    let secs = within(Duration::from_secs(60), start)?;
    ensure(
        mismatches == 0,
        format!("max error {max:.1e}, accuracy mismatches {mismatches}/30, final {pa:.4}/{sa:.4}; {secs:.2} s"),
    )
}

/// Criteria 6 and 7 share one reduced-MNIST run.
fn mnist(selected: &dyn Fn(usize) -> bool) -> Vec<(usize, &'static str, Outcome)> {
    let mut out = Vec::new();
    if !selected(6) && !selected(7) {
        return out;
    }
    let start = Instant::now();
    let result = load_config(&config_path("mnist-reduced.conf"))
        .map_err(|e| e.to_string())
        .and_then(|cfg| run_experiment(&cfg).map_err(|e| e.to_string()));
    let exp = match result {
        Ok(exp) => exp,
        Err(e) => {
            out.push((6, "reduced-MNIST parity", Err(e.clone())));
            out.push((7, "encryption overhead", Err(e)));
            return out;
        }
    };
    let parity = parity_checks(&exp, 1e-5).and_then(|(max, pa, sa, _)| {
        let secs = within(Duration::from_secs(15 * 60), start)?;
        let gap = (pa - sa).abs() * 100.0;
        ensure(
            gap <= 0.5,
            format!("final accuracy plain {pa:.4} sifl {sa:.4} (gap {gap:.2} pp), max error {max:.1e}; {secs:.1} s"),
        )
    });
    out.push((6, "reduced-MNIST parity", parity));

    let sifl: Vec<_> = exp.output.records_for(Mode::Sifl).collect();
    let worst = sifl
        .iter()
        .map(|r| (r.t_encrypt_ms + r.t_decrypt_ms) / r.t_train_ms)
        .fold(0.0, f64::max);
    let mean_crypto = sifl
        .iter()
        .map(|r| r.t_encrypt_ms + r.t_decrypt_ms)
        .sum::<f64>()
        / sifl.len() as f64;
    let mean_train = sifl.iter().map(|r| r.t_train_ms).sum::<f64>() / sifl.len() as f64;
    out.push((
        7,
        "encryption overhead",
        ensure(
            worst <= 0.5,
            format!(
                "worst round crypto/train {:.2}% (mean {mean_crypto:.1} ms vs {mean_train:.0} ms)",
                worst * 100.0
            ),
        ),
    ));
    out
}

fn random_message(rng: &mut ChaCha20Rng) -> Message {
    let floats = |rng: &mut ChaCha20Rng, min: usize| -> Vec<f64> {
        let len = rng.random_range(min..min + 40);
        (0..len).map(|_| f64::from_bits(rng.random())).collect()
    };
    let round = rng.random();
    let client = rng.random();
    match rng.random_range(0..6) {
        0 => Message::empty(Kind::Hello, round, client),
        1 => Message::empty(Kind::Done, round, client),
        2 => Message::floats(Kind::Global, round, 0, floats(rng, 0)),
        3 => Message::floats(Kind::Update, round, client, floats(rng, 2)),
        4 => Message::floats(Kind::Aggregate, round, 0, floats(rng, 2)),
        _ => {
            let len = rng.random_range(1..200);
            Message::keyset(client, (0..len).map(|_| rng.random()).collect())
        }
    }
}

fn wire_protocol() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    for i in 0..10_000 {
        let m = random_message(&mut rng);
        let bytes = encode_message(&m);
        let back = decode_message(&bytes).map_err(|e| format!("frame {i}: {e}"))?;
        if encode_message(&back) != bytes {
            return Err(format!("frame {i} did not round-trip bit-exactly"));
        }
    }
    let good = encode_message(&Message::floats(Kind::Update, 3, 2, vec![1.0, 2.0, 3.0]));
    let mut bad_magic = good.clone();
    bad_magic[2] = b'X';
    let mut bad_version = good.clone();
    bad_version[4] = 0x7f;
    let cases: Vec<FrameCase> = vec![
        ("bad magic", decode_message(&bad_magic), |e| {
            matches!(e, WireError::BadMagic { offset: 0 })
        }),
        ("bad version", decode_message(&bad_version), |e| {
            matches!(
                e,
                WireError::BadVersion {
                    offset: 4,
                    version: 0x7f
                }
            )
        }),
        ("truncated header", decode_message(&good[..11]), |e| {
            matches!(
                e,
                WireError::Truncated {
                    offset: 11,
                    needed: 9
                }
            )
        }),
        (
            "truncated payload",
            decode_message(&good[..good.len() - 5]),
            |e| {
                matches!(
                    e,
                    WireError::Truncated {
                        offset: 39,
                        needed: 5
                    }
                )
            },
        ),
    ];
    for (name, result, expected) in cases {
        match result {
            Err(e) if expected(&e) => {}
            other => return Err(format!("{name}: got {other:?}")),
        }
    }
    Ok("10000 fuzzed frames bit-exact; bad magic, bad version, truncation rejected at the right offsets".into())
}

fn freshness() -> Outcome {
    let keys = KeySet::for_params(200, 64, 1, 3).unwrap();
    let src = RandomnessSource::new(42, 1.0);
    let mut digests = std::collections::HashSet::new();
    for t in 0..1000 {
        let rr = src.fresh(&keys, t).map_err(|e| e.to_string())?;
        digests.insert(rr.digest());
    }
    if digests.len() != 1000 || src.issued() != 1000 {
        return Err(format!(
            "{} distinct digests over 1000 rounds",
            digests.len()
        ));
    }
    let replay = src.draw(keys.randomness_dim(), 17);
    match src.record(&replay) {
        Err(FreshnessError::Reused {
            round: 17,
            first_round: 17,
        }) => Ok("1000 distinct digests; replay of round 17 refused".into()),
        other => Err(format!("replay not refused: {other:?}")),
    }
}

fn socket_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = load_config(&config_path("synthetic.conf")).map_err(|e| e.to_string())?;
    let fed = build_federation(&cfg).map_err(|e| e.to_string())?;
    let mut tc = cfg.training_config();
    tc.mode = RunMode::Dual;
    let sim = run_training(&tc, &fed).map_err(|e| e.to_string())?;
    tc.transport = TransportKind::Socket {
        listen: "127.0.0.1:0".into(),
        timeout: Duration::from_secs(60),
    };
    let net = run_training(&tc, &fed).map_err(|e| e.to_string())?;
    if sim.records.len() != net.records.len() {
        return Err(format!(
            "{} vs {} records",
            sim.records.len(),
            net.records.len()
        ));
    }
    if let Some((a, b)) = sim
        .records
        .iter()
        .zip(&net.records)
        .find(|(a, b)| !a.same_outcome(b))
    {
        return Err(format!(
            "round {} ({}) differs: {a:?} vs {b:?}",
            a.round,
            a.mode.as_str()
        ));
    }
    Ok(format!(
        "{} records identical across transports; {:.2} s",
        sim.records.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("SIFL_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let selected = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));

    let simple: [Criterion; 5] = [
        (1, "key algebra", key_algebra),
        (2, "immersion commutation", commutation),
        (3, "kernel invariance", kernel_invariance),
        (4, "gradient check", gradient_check),
        (5, "synthetic parity", synthetic_parity),
    ];
    let mut results = Vec::new();
    for (n, name, f) in simple {
        if selected(n) {
            results.push((n, name, f()));
        }
    }
    results.extend(mnist(&selected));
    let rest: [Criterion; 3] = [
        (8, "wire protocol", wire_protocol),
        (9, "randomness freshness", freshness),
        (10, "simulator/socket equivalence", socket_equivalence),
    ];
    for (n, name, f) in rest {
        if selected(n) {
            results.push((n, name, f()));
        }
    }

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
