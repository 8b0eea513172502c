//! TCP transport.
//!
//! Topology: the aggregator listens on the configured address; the server
//! and every client connect to it and identify themselves with `HELLO`. The
//! key set never passes through the aggregator: the server opens a second,
//! handshake-only listener and answers each client's `HELLO` with a
//! `KEYSET` frame. That channel is assumed to be secure; nothing here
//! encrypts or authenticates it.
//!
//! Per round the server sends `GLOBAL` to the aggregator, which relays it to
//! every client, buffers their `UPDATE`s, and returns one `AGGREGATE`. `DONE`
//! tears everything down.

use std::collections::HashSet;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::keys::KeySet;
use crate::model::EncryptedParamVector;
use crate::protocol::server::RoundTransport;
use crate::protocol::wire::{read_message, write_message, Kind, Message, Payload, WireError};
use crate::protocol::{AggregatedModel, Aggregator, ClientNode, ClientUpdate, ProtocolError};
use crate::{Error, Result};

const ACCEPT_POLL: Duration = Duration::from_millis(2);

type Worker = (String, JoinHandle<Result<()>>);

/// Server-side handle on a running socket federation.
pub struct SocketTransport {
    to_aggregator: TcpStream,
    handshake_listener: TcpListener,
    roster: Vec<u16>,
    workers: Vec<Worker>,
    timeout: Duration,
    aggregator_addr: SocketAddr,
}

impl std::fmt::Debug for SocketTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SocketTransport")
            .field("aggregator_addr", &self.aggregator_addr)
            .field("roster", &self.roster)
            .finish()
    }
}

fn io_err(what: &str, e: io::Error) -> Error {
    Error::Io {
        path: what.to_string(),
        source: e,
    }
}

fn accept_until(listener: &TcpListener, deadline: Instant) -> Result<TcpStream> {
    listener
        .set_nonblocking(true)
        .map_err(|e| io_err("listener", e))?;
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false).map_err(|e| io_err("accept", e))?;
                s.set_nodelay(true).ok();
                return Ok(s);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(io_err(
                        "accept",
                        io::Error::new(io::ErrorKind::TimedOut, "peer did not connect in time"),
                    ));
                }
                thread::sleep(ACCEPT_POLL);
            }
            Err(e) => return Err(io_err("accept", e)),
        }
    }
}

fn connect(addr: SocketAddr) -> Result<TcpStream> {
    let s = TcpStream::connect(addr).map_err(|e| io_err(&addr.to_string(), e))?;
    s.set_nodelay(true).ok();
    Ok(s)
}

impl SocketTransport {
    /// Binds the aggregator on `listen` (e.g. `127.0.0.1:0`) and starts the
    /// aggregator and one thread per client. The server side connects before
    /// this returns.
    pub fn launch(listen: &str, clients: Vec<ClientNode>, timeout: Duration) -> Result<Self> {
        let agg_listener = TcpListener::bind(listen).map_err(|e| io_err(listen, e))?;
        let aggregator_addr = agg_listener.local_addr().map_err(|e| io_err(listen, e))?;
        let handshake_listener = TcpListener::bind((aggregator_addr.ip(), 0))
            .map_err(|e| io_err("handshake listener", e))?;
        let handshake_addr = handshake_listener
            .local_addr()
            .map_err(|e| io_err("handshake listener", e))?;

        let roster: Vec<u16> = clients.iter().map(ClientNode::id).collect();
        let mut workers: Vec<Worker> = Vec::new();
        {
            let roster = roster.clone();
            workers.push((
                "aggregator".into(),
                thread::spawn(move || run_aggregator(agg_listener, roster, timeout)),
            ));
        }
        for node in clients {
            let name = format!("client {}", node.id());
            workers.push((
                name,
                thread::spawn(move || run_client(node, handshake_addr, aggregator_addr)),
            ));
        }

        let mut to_aggregator = connect(aggregator_addr)?;
        write_message(&mut to_aggregator, &Message::empty(Kind::Hello, 0, 0))?;
        Ok(Self {
            to_aggregator,
            handshake_listener,
            roster,
            workers,
            timeout,
            aggregator_addr,
        })
    }

    pub fn aggregator_addr(&self) -> SocketAddr {
        self.aggregator_addr
    }

    /// Joins every worker and returns the aggregator's error if it failed,
    /// else the first client error.
    fn join_workers(&mut self) -> Result<()> {
        let mut first: Option<Error> = None;
        for (name, handle) in self.workers.drain(..) {
            let res = handle.join().unwrap_or_else(|_| {
                Err(ProtocolError::Peer {
                    role: name.clone(),
                    reason: "thread panicked".into(),
                }
                .into())
            });
            if let Err(e) = res {
                log::debug!("{name} exited with error: {e}");
                if first.is_none() {
                    first = Some(e);
                }
            }
        }
        first.map_or(Ok(()), Err)
    }

    /// After a failed exchange: prefer the aggregator's explanation.
    fn failure(&mut self, e: Error) -> Error {
        let _ = self.to_aggregator.shutdown(Shutdown::Both);
        match self.join_workers() {
            Err(worker) => worker,
            Ok(()) => e,
        }
    }
}

impl RoundTransport for SocketTransport {
    fn handshake(&mut self, keys: Option<&Arc<KeySet>>) -> Result<()> {
        let blob = keys.map(|k| k.to_bytes()).unwrap_or_default();
        let deadline = Instant::now() + self.timeout;
        let mut seen = HashSet::new();
        for _ in 0..self.roster.len() {
            let mut s = accept_until(&self.handshake_listener, deadline)?;
            let hello = read_message(&mut s)?;
            if hello.kind != Kind::Hello || !self.roster.contains(&hello.client_id) {
                return Err(ProtocolError::Unexpected {
                    expected: "HELLO from a rostered client",
                    got: format!("{:?} from {}", hello.kind, hello.client_id),
                }
                .into());
            }
            if !seen.insert(hello.client_id) {
                return Err(ProtocolError::Roster(self.roster.clone()).into());
            }
            write_message(&mut s, &Message::keyset(hello.client_id, blob.clone()))?;
        }
        Ok(())
    }

    fn exchange(&mut self, global: &EncryptedParamVector) -> Result<AggregatedModel> {
        let round = global.round();
        let msg = Message::floats(Kind::Global, round, 0, global.values().to_vec());
        let reply = write_message(&mut self.to_aggregator, &msg)
            .and_then(|_| read_message(&mut self.to_aggregator));
        let reply = match reply {
            Ok(m) => m,
            Err(e) => return Err(self.failure(e.into())),
        };
        if reply.kind != Kind::Aggregate || reply.round != round {
            let got = format!("{:?} for round {}", reply.kind, reply.round);
            return Err(self.failure(
                ProtocolError::Unexpected {
                    expected: "AGGREGATE",
                    got,
                }
                .into(),
            ));
        }
        let p = reply.float_payload();
        Ok(AggregatedModel {
            train_loss: p[0],
            total_size: p[1] as u64,
            model: EncryptedParamVector::new(p[2..].to_vec(), round),
        })
    }

    fn shutdown(&mut self) -> Result<()> {
        if self.workers.is_empty() {
            return Ok(());
        }
        let sent = write_message(&mut self.to_aggregator, &Message::empty(Kind::Done, 0, 0));
        let joined = self.join_workers();
        joined?;
        sent?;
        Ok(())
    }
}

impl Drop for SocketTransport {
    fn drop(&mut self) {
        if !self.workers.is_empty() {
            let _ = self.to_aggregator.shutdown(Shutdown::Both);
            let _ = self.join_workers();
        }
    }
}

fn update_from_frame(msg: &Message) -> Result<ClientUpdate> {
    if msg.kind != Kind::Update {
        return Err(ProtocolError::Unexpected {
            expected: "UPDATE",
            got: format!("{:?}", msg.kind),
        }
        .into());
    }
    let p = msg.float_payload();
    let size = p[0];
    if !(size >= 1.0 && size.fract() == 0.0 && size <= u64::MAX as f64) {
        return Err(ProtocolError::EmptyClient {
            client: msg.client_id,
        }
        .into());
    }
    Ok(ClientUpdate {
        client_id: msg.client_id,
        size: size as u64,
        train_loss: p[1],
        model: EncryptedParamVector::new(p[2..].to_vec(), msg.round),
    })
}

fn run_aggregator(listener: TcpListener, roster: Vec<u16>, timeout: Duration) -> Result<()> {
    let deadline = Instant::now() + timeout;
    let mut server: Option<TcpStream> = None;
    let mut clients: Vec<(u16, TcpStream)> = Vec::new();
    while server.is_none() || clients.len() < roster.len() {
        let mut s = accept_until(&listener, deadline)?;
        let hello = read_message(&mut s)?;
        if hello.kind != Kind::Hello {
            return Err(ProtocolError::Unexpected {
                expected: "HELLO",
                got: format!("{:?}", hello.kind),
            }
            .into());
        }
        match hello.client_id {
            0 if server.is_none() => server = Some(s),
            id if roster.contains(&id) && !clients.iter().any(|(c, _)| *c == id) => {
                clients.push((id, s))
            }
            id => return Err(ProtocolError::UnknownClient(id).into()),
        }
    }
    let mut server = server.unwrap();
    clients.sort_by_key(|(id, _)| *id);

    let (tx, rx) = mpsc::channel::<(u16, Result<Message, WireError>)>();
    for (id, s) in &clients {
        let mut reader = s.try_clone().map_err(|e| io_err("client stream", e))?;
        let tx = tx.clone();
        let id = *id;
        thread::spawn(move || loop {
            let msg = read_message(&mut reader);
            let stop = msg.is_err();
            if tx.send((id, msg)).is_err() || stop {
                break;
            }
        });
    }
    drop(tx);

    let result = aggregator_loop(&mut server, &mut clients, &roster, &rx, timeout);
    for (_, s) in &clients {
        let _ = s.shutdown(Shutdown::Both);
    }
    let _ = server.shutdown(Shutdown::Both);
    result
}

fn aggregator_loop(
    server: &mut TcpStream,
    clients: &mut [(u16, TcpStream)],
    roster: &[u16],
    rx: &mpsc::Receiver<(u16, Result<Message, WireError>)>,
    timeout: Duration,
) -> Result<()> {
    let mut dead: HashSet<u16> = HashSet::new();
    loop {
        let msg = read_message(server)?;
        match msg.kind {
            Kind::Global => {
                let round = msg.round;
                let payload = msg.float_payload().to_vec();
                for (id, s) in clients.iter_mut() {
                    let m = Message::floats(Kind::Global, round, 0, payload.clone());
                    if write_message(s, &m).is_err() {
                        dead.insert(*id);
                    }
                }
                let mut agg = Aggregator::new(round, roster)?;
                let deadline = Instant::now() + timeout;
                while !agg.is_complete() {
                    if agg.missing().iter().all(|id| dead.contains(id)) {
                        break;
                    }
                    let left = deadline.saturating_duration_since(Instant::now());
                    match rx.recv_timeout(left) {
                        Ok((_, Ok(m))) => agg.submit(update_from_frame(&m)?)?,
                        Ok((id, Err(e))) => {
                            log::warn!("client {id} connection failed: {e}");
                            dead.insert(id);
                        }
                        Err(_) => break,
                    }
                }
                let out = agg.finish()?;
                let mut payload = Vec::with_capacity(out.model.len() + 2);
                payload.push(out.train_loss);
                payload.push(out.total_size as f64);
                payload.extend_from_slice(out.model.values());
                write_message(server, &Message::floats(Kind::Aggregate, round, 0, payload))?;
            }
            Kind::Done => {
                for (_, s) in clients.iter_mut() {
                    let _ = write_message(s, &Message::empty(Kind::Done, msg.round, 0));
                }
                return Ok(());
            }
            other => {
                return Err(ProtocolError::Unexpected {
                    expected: "GLOBAL or DONE",
                    got: format!("{other:?}"),
                }
                .into())
            }
        }
    }
}

fn run_client(mut node: ClientNode, handshake: SocketAddr, aggregator: SocketAddr) -> Result<()> {
    let id = node.id();
    {
        let mut s = connect(handshake)?;
        write_message(&mut s, &Message::empty(Kind::Hello, 0, id))?;
        let reply = read_message(&mut s)?;
        match (&reply.kind, &reply.payload) {
            (Kind::KeySet, Payload::Bytes(blob)) => node.handshake_bytes(blob)?,
            _ => {
                return Err(ProtocolError::Unexpected {
                    expected: "KEYSET",
                    got: format!("{:?}", reply.kind),
                }
                .into())
            }
        }
    }
    let mut s = connect(aggregator)?;
    write_message(&mut s, &Message::empty(Kind::Hello, 0, id))?;
    loop {
        let msg = read_message(&mut s)?;
        match msg.kind {
            Kind::Global => {
                if node.is_silent() {
                    continue;
                }
                let global = EncryptedParamVector::new(msg.float_payload().to_vec(), msg.round);
                let up = node.update(&global)?;
                let mut payload = Vec::with_capacity(up.model.len() + 2);
                payload.push(up.size as f64);
                payload.push(up.train_loss);
                payload.extend_from_slice(up.model.values());
                write_message(
                    &mut s,
                    &Message::floats(Kind::Update, msg.round, id, payload),
                )?;
            }
            Kind::Done => return Ok(()),
            other => {
                return Err(ProtocolError::Unexpected {
                    expected: "GLOBAL or DONE",
                    got: format!("{other:?}"),
                }
                .into())
            }
        }
    }
}
