//! Seed derivation and the per-round kernel randomness `Rᵗ`.
//!
//! Every random stream in a run is derived from one `u64` seed plus a
//! [`Domain`] tag and an index, so key material, masking vectors, weight
//! init and batch shuffles never share a stream.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::keys::KeySet;

/// Independent purposes a run seed is stretched into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Keys = 1,
    Masking = 2,
    Init = 3,
    Shuffle = 4,
    Synthetic = 5,
    Partition = 6,
}

/// splitmix64 finalizer over `seed ⊕ φ·index`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha20 stream for `(seed, domain, index)`.
pub fn stream_rng(seed: u64, domain: Domain, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, domain as u64));
    rng.set_stream(index);
    rng
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FreshnessError {
    #[error("kernel randomness for round {round} repeats the vector used in round {first_round}")]
    Reused { round: u32, first_round: u32 },
}

/// The masking vector `Rᵗ` for one global round: the concatenation of the
/// per-block vectors `R_j` of length `m_j − n_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRandomness {
    round: u32,
    values: Vec<f64>,
}

impl RoundRandomness {
    pub fn new(round: u32, values: Vec<f64>) -> Self {
        Self { round, values }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// SHA-256 over the little-endian bytes of `R`.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Server-side generator of `Rᵗ`, with a log of every digest handed out.
///
/// Draws are i.i.d. `scale · N(0, 1)` and depend only on `(seed, t)`. The log
/// is the only mutable state and is guarded by a mutex.
#[derive(Debug)]
pub struct RandomnessSource {
    seed: u64,
    scale: f64,
    log: Mutex<HashMap<[u8; 32], u32>>,
}

impl RandomnessSource {
    pub fn new(seed: u64, scale: f64) -> Self {
        Self {
            seed,
            scale,
            log: Mutex::new(HashMap::new()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Draws an `Rᵗ` of length `dim` without touching the freshness log.
    pub fn draw(&self, dim: usize, round: u32) -> RoundRandomness {
        let mut rng = stream_rng(self.seed, Domain::Masking, u64::from(round));
        let values = (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                self.scale * z
            })
            .collect();
        RoundRandomness::new(round, values)
    }

    /// Draws `Rᵗ` sized for `keys` and records its digest. A repeated digest
    /// means the same mask would be applied twice and is refused.
    pub fn fresh(&self, keys: &KeySet, round: u32) -> Result<RoundRandomness, FreshnessError> {
        let rr = self.draw(keys.randomness_dim(), round);
        self.record(&rr)?;
        Ok(rr)
    }

    /// Appends the digest of `rr` to the log.
    pub fn record(&self, rr: &RoundRandomness) -> Result<[u8; 32], FreshnessError> {
        let digest = rr.digest();
        let mut log = self.log.lock().expect("freshness log poisoned");
        if let Some(&first_round) = log.get(&digest) {
            return Err(FreshnessError::Reused {
                round: rr.round,
                first_round,
            });
        }
        log.insert(digest, rr.round);
        Ok(digest)
    }

    /// Number of distinct digests recorded so far.
    pub fn issued(&self) -> usize {
        self.log.lock().expect("freshness log poisoned").len()
    }
}
