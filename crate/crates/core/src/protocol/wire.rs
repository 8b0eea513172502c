//! Binary frames exchanged between server, aggregator and clients.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SIFL"
//!      4     1  version: 0x01 = f64 payload, 0x02 = raw byte payload
//!      5     1  kind
//!      6     4  round (u32 LE)
//!     10     2  client id (u16 LE, 0 = server/aggregator)
//!     12     8  payload length (u64 LE): floats for v1, bytes for v2
//!     20     …  payload (f64 LE for v1)
//! ```
//!
//! Only `KEYSET` frames use version 2; their payload is a `SIKY` key blob.
//!
//! Payload schemas:
//!
//! * `HELLO`, `DONE`: empty.
//! * `KEYSET`: key blob bytes (empty in the plain baseline).
//! * `GLOBAL`: the broadcast model.
//! * `UPDATE`: local dataset size, mean local loss, then the local model.
//! * `AGGREGATE`: weighted mean loss, total dataset size, then the
//!   aggregated model.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SIFL";
pub const VERSION_FLOATS: u8 = 0x01;
pub const VERSION_BYTES: u8 = 0x02;
pub const HEADER_LEN: usize = 20;
/// Upper bound on a single payload, in bytes.
pub const MAX_PAYLOAD_BYTES: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Hello = 1,
    KeySet = 2,
    Global = 3,
    Update = 4,
    Aggregate = 5,
    Done = 6,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::Hello,
        Kind::KeySet,
        Kind::Global,
        Kind::Update,
        Kind::Aggregate,
        Kind::Done,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == b)
    }

    fn min_floats(self) -> usize {
        match self {
            Kind::Update | Kind::Aggregate => 2,
            _ => 0,
        }
    }

    fn max_floats(self) -> Option<usize> {
        match self {
            Kind::Hello | Kind::Done => Some(0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Floats(Vec<f64>),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: Kind,
    pub round: u32,
    pub client_id: u16,
    pub payload: Payload,
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic at byte {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version 0x{version:02x} at byte {offset}")]
    BadVersion { offset: usize, version: u8 },
    #[error("unknown message kind 0x{kind:02x} at byte {offset}")]
    BadKind { offset: usize, kind: u8 },
    #[error("truncated frame at byte {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{kind:?} payload invalid at byte {offset}: {reason}")]
    Schema {
        offset: usize,
        kind: Kind,
        reason: String,
    },
    #[error("{extra} trailing bytes after frame at byte {offset}")]
    Trailing { offset: usize, extra: usize },
    #[error("transport error: {0}")]
    Io(#[from] io::Error),
}

impl Message {
    pub fn floats(kind: Kind, round: u32, client_id: u16, payload: Vec<f64>) -> Self {
        Self {
            kind,
            round,
            client_id,
            payload: Payload::Floats(payload),
        }
    }

    pub fn empty(kind: Kind, round: u32, client_id: u16) -> Self {
        Self::floats(kind, round, client_id, Vec::new())
    }

    pub fn keyset(client_id: u16, blob: Vec<u8>) -> Self {
        Self {
            kind: Kind::KeySet,
            round: 0,
            client_id,
            payload: Payload::Bytes(blob),
        }
    }

    pub fn float_payload(&self) -> &[f64] {
        match &self.payload {
            Payload::Floats(v) => v,
            Payload::Bytes(_) => &[],
        }
    }

    fn check_schema(&self, offset: usize) -> Result<(), WireError> {
        let err = |reason: String| WireError::Schema {
            offset,
            kind: self.kind,
            reason,
        };
        match (&self.payload, self.kind) {
            (Payload::Bytes(_), Kind::KeySet) => Ok(()),
            (Payload::Bytes(_), _) => Err(err("byte payload only allowed for KEYSET".into())),
            (Payload::Floats(_), Kind::KeySet) => Err(err("KEYSET requires a byte payload".into())),
            (Payload::Floats(v), k) => {
                if v.len() < k.min_floats() {
                    return Err(err(format!(
                        "need at least {} floats, got {}",
                        k.min_floats(),
                        v.len()
                    )));
                }
                if let Some(max) = k.max_floats() {
                    if v.len() > max {
                        return Err(err(format!(
                            "at most {max} floats allowed, got {}",
                            v.len()
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Encodes one frame. Panics if the message violates its kind's payload
/// schema; decoded messages always satisfy it.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    msg.check_schema(HEADER_LEN)
        .unwrap_or_else(|e| panic!("encode_message: {e}"));
    let (version, len, body_len) = match &msg.payload {
        Payload::Floats(v) => (VERSION_FLOATS, v.len(), v.len() * 8),
        Payload::Bytes(b) => (VERSION_BYTES, b.len(), b.len()),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + body_len);
    out.extend_from_slice(MAGIC);
    out.push(version);
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.round.to_le_bytes());
    out.extend_from_slice(&msg.client_id.to_le_bytes());
    out.extend_from_slice(&(len as u64).to_le_bytes());
    match &msg.payload {
        Payload::Floats(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Payload::Bytes(b) => out.extend_from_slice(b),
    }
    out
}

struct Header {
    version: u8,
    kind: Kind,
    round: u32,
    client_id: u16,
    body_len: usize,
}

fn parse_header(h: &[u8]) -> Result<Header, WireError> {
    let have = h.len().min(HEADER_LEN);
    if h[..have.min(4)] != MAGIC[..have.min(4)] {
        return Err(WireError::BadMagic { offset: 0 });
    }
    if have < 4 {
        return Err(WireError::Truncated {
            offset: have,
            needed: HEADER_LEN - have,
        });
    }
    if have > 4 {
        let version = h[4];
        if version != VERSION_FLOATS && version != VERSION_BYTES {
            return Err(WireError::BadVersion { offset: 4, version });
        }
    }
    if have > 5 && Kind::from_byte(h[5]).is_none() {
        return Err(WireError::BadKind {
            offset: 5,
            kind: h[5],
        });
    }
    if have < HEADER_LEN {
        return Err(WireError::Truncated {
            offset: have,
            needed: HEADER_LEN - have,
        });
    }
    let version = h[4];
    let kind = Kind::from_byte(h[5]).unwrap();
    let round = u32::from_le_bytes(h[6..10].try_into().unwrap());
    let client_id = u16::from_le_bytes(h[10..12].try_into().unwrap());
    let len = u64::from_le_bytes(h[12..20].try_into().unwrap());
    let unit = if version == VERSION_FLOATS { 8 } else { 1 };
    let body_len = len
        .checked_mul(unit)
        .filter(|&b| b <= MAX_PAYLOAD_BYTES)
        .ok_or(WireError::Schema {
            offset: 12,
            kind,
            reason: format!("payload length {len} exceeds limit"),
        })? as usize;
    Ok(Header {
        version,
        kind,
        round,
        client_id,
        body_len,
    })
}

fn build_message(h: Header, body: &[u8]) -> Result<Message, WireError> {
    let payload = if h.version == VERSION_FLOATS {
        Payload::Floats(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    } else {
        Payload::Bytes(body.to_vec())
    };
    let msg = Message {
        kind: h.kind,
        round: h.round,
        client_id: h.client_id,
        payload,
    };
    msg.check_schema(HEADER_LEN)?;
    Ok(msg)
}

/// Decodes exactly one frame from `bytes`.
pub fn decode_message(bytes: &[u8]) -> Result<Message, WireError> {
    let h = parse_header(bytes)?;
    let end = HEADER_LEN + h.body_len;
    if bytes.len() < end {
        return Err(WireError::Truncated {
            offset: bytes.len(),
            needed: end - bytes.len(),
        });
    }
    if bytes.len() > end {
        return Err(WireError::Trailing {
            offset: end,
            extra: bytes.len() - end,
        });
    }
    build_message(h, &bytes[HEADER_LEN..end])
}

/// Reads one frame from a byte stream.
pub fn read_message<R: Read>(r: &mut R) -> Result<Message, WireError> {
    let mut header = [0u8; HEADER_LEN];
    read_full(r, &mut header, 0)?;
    let h = parse_header(&header)?;
    let mut body = vec![0u8; h.body_len];
    read_full(r, &mut body, HEADER_LEN)?;
    build_message(h, &body)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8], base: usize) -> Result<(), WireError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(WireError::Truncated {
                    offset: base + filled,
                    needed: buf.len() - filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), WireError> {
    w.write_all(&encode_message(msg))?;
    w.flush()?;
    Ok(())
}
