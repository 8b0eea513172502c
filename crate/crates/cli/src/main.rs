//! `sifl` command-line harness.
//!
//! Every subcommand prints a JSON summary on stdout. Exit status is 0 when
//! all checks pass, 1 when a check fails and 2 on errors.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use sifl::harness::config::{load_config, RunConfig};
use sifl::harness::{run_experiment, write_metrics_file, Experiment};
use sifl::keys::KeySet;
use sifl::protocol::training::RunMode;
use sifl::protocol::Mode;

#[derive(Parser)]
#[command(
    name = "sifl",
    version,
    about = "Federated learning on immersion-encrypted models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the blocked key set for the configured model and save it.
    Keygen(Common),
    /// Train and write the per-round metrics CSV.
    Run(Common),
    /// Dual run; fails unless both federations stay equivalent.
    Check(Common),
    /// Run and report timing; fails if encrypt+decrypt exceeds half of training time.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<RunMode>,
    /// Overrides both the config file and SIFL_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV for run/check/bench, key blob for keygen.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run over TCP, with the aggregator listening here (e.g. 127.0.0.1:0).
    #[arg(long)]
    net: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=2))]
    verbosity: Option<u8>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                load_config(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Ok(seed) = std::env::var("SIFL_SEED") {
            cfg.seed = seed.trim().parse().context("SIFL_SEED is not a u64")?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if let Some(net) = &self.net {
            cfg.net = Some(net.clone());
        }
        if let Some(v) = self.verbosity {
            cfg.verbosity = v;
        }
        cfg.validate()?;
        init_logging(cfg.verbosity);
        Ok(cfg)
    }
}

/// `RUST_LOG` wins; otherwise verbosity 0/1/2 maps to warn/info/debug.
fn init_logging(verbosity: u8) {
    let level = ["warn", "info", "debug"][verbosity.min(2) as usize];
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
}

enum Outcome {
    Pass(Value),
    Fail(Value),
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn summarize(cfg: &RunConfig, exp: &Experiment) -> Value {
    let out = &exp.output;
    let mut modes = serde_json::Map::new();
    for mode in cfg.mode.modes() {
        let recs: Vec<_> = out.records_for(*mode).collect();
        let last = recs.last();
        modes.insert(
            mode.as_str().to_string(),
            json!({
                "final_accuracy": last.map(|r| r.test_accuracy),
                "final_train_loss": last.map(|r| r.train_loss),
                "mean_t_train_ms": mean(recs.iter().map(|r| r.t_train_ms)),
                "mean_t_encrypt_ms": mean(recs.iter().map(|r| r.t_encrypt_ms)),
                "mean_t_decrypt_ms": mean(recs.iter().map(|r| r.t_decrypt_ms)),
            }),
        );
    }
    let mut v = json!({
        "mode": cfg.mode.as_str(),
        "rounds": cfg.rounds,
        "clients": cfg.clients,
        "seed": cfg.seed,
        "transport": if cfg.net.is_some() { "socket" } else { "simulated" },
        "params": cfg.model_spec().param_count(),
        "keygen_ms": out.keygen_ms,
        "wall_ms": exp.wall_ms,
        "metrics": cfg.output.display().to_string(),
        "modes": modes,
    });
    if let Some(max) = out.max_equivalence_error() {
        v["max_equivalence_error"] = json!(max);
    }
    if !out.local_immersion_errors.is_empty() {
        v["local_immersion_errors"] = json!(out.local_immersion_errors);
    }
    v
}

fn run(cfg: &RunConfig) -> Result<Experiment> {
    let exp = run_experiment(cfg)?;
    write_metrics_file(&cfg.output, &exp.output.records)?;
    Ok(exp)
}

fn keygen(cfg: &RunConfig, out: Option<&PathBuf>) -> Result<Outcome> {
    let start = Instant::now();
    let keys = cfg.training_config().generate_keys()?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let (mut worst_mg, mut worst_mn) = (0.0f64, 0.0f64);
    for k in keys.keys() {
        let (mg, mn) = k.identity_residuals();
        worst_mg = worst_mg.max(mg);
        worst_mn = worst_mn.max(mn);
    }
    let path = out.cloned().unwrap_or_else(|| PathBuf::from("keys.bin"));
    let bytes = keys.to_bytes();
    std::fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    // a reload proves the blob is self-consistent
    KeySet::from_bytes(&bytes)?;
    Ok(Outcome::Pass(json!({
        "blocks": keys.keys().len(),
        "plain_dim": keys.plain_dim(),
        "immersed_dim": keys.immersed_dim(),
        "max_mg_minus_i": worst_mg,
        "max_mn": worst_mn,
        "keygen_ms": ms,
        "bytes": bytes.len(),
        "out": path.display().to_string(),
    })))
}

fn check(mut cfg: RunConfig) -> Result<Outcome> {
    cfg.mode = RunMode::Dual;
    let exp = run(&cfg)?;
    let mut summary = summarize(&cfg, &exp);
    let report = exp
        .equivalence
        .as_ref()
        .context("dual run produced no report")?;
    let out = &exp.output;
    let mismatched: Vec<u32> = out
        .records_for(Mode::Plain)
        .zip(out.records_for(Mode::Sifl))
        .filter(|(p, s)| p.test_accuracy != s.test_accuracy)
        .map(|(p, _)| p.round)
        .collect();
    summary["equivalence"] = json!({
        "threshold": report.threshold,
        "max": report.max,
        "offending_round": report.offending_round,
        "accuracy_mismatch_rounds": mismatched,
    });
    Ok(if report.passed() && mismatched.is_empty() {
        Outcome::Pass(summary)
    } else {
        Outcome::Fail(summary)
    })
}

fn bench(mut cfg: RunConfig) -> Result<Outcome> {
    if cfg.mode == RunMode::Plain {
        cfg.mode = RunMode::Sifl;
    }
    let exp = run(&cfg)?;
    let mut summary = summarize(&cfg, &exp);
    let recs: Vec<_> = exp.output.records_for(Mode::Sifl).collect();
    let crypto = mean(recs.iter().map(|r| r.t_encrypt_ms + r.t_decrypt_ms));
    let train = mean(recs.iter().map(|r| r.t_train_ms));
    let ratio = crypto / train.max(f64::MIN_POSITIVE);
    summary["overhead"] = json!({
        "mean_crypto_ms": crypto,
        "mean_train_ms": train,
        "ratio": ratio,
        "limit": 0.5,
        "parallel": sifl::par::is_parallel(),
    });
    Ok(if ratio <= 0.5 {
        Outcome::Pass(summary)
    } else {
        Outcome::Fail(summary)
    })
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Keygen(c) => {
            let cfg = c.resolve()?;
            keygen(&cfg, c.out.as_ref())
        }
        Command::Run(c) => {
            let cfg = c.resolve()?;
            let exp = run(&cfg)?;
            Ok(Outcome::Pass(summarize(&cfg, &exp)))
        }
        Command::Check(c) => check(c.resolve()?),
        Command::Bench(c) => bench(c.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (status, body, code) = match dispatch(cli) {
        Ok(Outcome::Pass(v)) => ("pass", v, 0),
        Ok(Outcome::Fail(v)) => ("fail", v, 1),
        Err(e) => ("error", json!({ "error": format!("{e:#}") }), 2),
    };
    let mut body = body;
    body["status"] = json!(status);
    println!("{}", serde_json::to_string_pretty(&body).expect("json"));
    ExitCode::from(code)
}
