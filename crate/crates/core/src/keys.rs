//! Random-matrix immersion keys.
//!
//! A key is a triple `(M, G, N)` with `M ∈ ℝ^{n×m}`, `G ∈ ℝ^{m×n}` and
//! `N ∈ ℝ^{m×(m−n)}` such that `M·G = I` and `M·N = 0`. Encryption is the
//! affine map `w ↦ G·w + N·R` and decryption is `w̃ ↦ M·w̃`; the kernel term
//! `N·R` disappears under `M`.
//!
//! Large parameter vectors are split into contiguous blocks, each with its
//! own key. Every identity holds blockwise, so the blocked key behaves like a
//! single block-diagonal `(M, G, N)`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::{self, max_abs, max_abs_from_identity};
use crate::model::{EncryptedParamVector, ParamVector};
use crate::par;
use crate::randomness::{derive_seed, stream_rng, Domain, RoundRandomness};

pub const DEFAULT_BLOCK_MAX: usize = 256;
pub const DEFAULT_EXPANSION: usize = 1;
/// Keys with `cond(M·Mᵀ)` above this are re-sampled.
pub const MAX_CONDITION: f64 = 1e6;
pub const MAX_KEYGEN_ATTEMPTS: u32 = 16;
/// Bound on `‖M·G − I‖∞` and `‖M·N‖∞` for an accepted key.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

const BLOB_MAGIC: &[u8; 4] = b"SIKY";
const BLOB_VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum KeyError {
    #[error("expansion r must be at least 1, got {0}")]
    InvalidExpansion(usize),
    #[error("plain dimension n must be at least 1")]
    EmptyBlock,
    #[error("key layout is empty")]
    EmptyLayout,
    #[error("block {index} has size 0")]
    ZeroBlock { index: usize },
    #[error("key generation with seed {seed} failed after {attempts} attempts: {reason}")]
    Generation {
        seed: u64,
        attempts: u32,
        reason: String,
    },
    #[error("ill-conditioned key: cond(M·Mᵀ) = {condition:e} exceeds {MAX_CONDITION:e}")]
    IllConditioned { condition: f64 },
    #[error("invalid key: {0}")]
    Invalid(String),
    #[error("{what}: expected length {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("malformed key blob at byte {offset}: {reason}")]
    Blob { offset: usize, reason: String },
}

/// One `(M, G, N)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmersionKey {
    decrypt: DMatrix<f64>,
    encrypt: DMatrix<f64>,
    kernel: DMatrix<f64>,
}

impl ImmersionKey {
    /// Builds a key from all three matrices, checking shapes, both identities
    /// and the rank of `N`.
    pub fn from_parts(
        decrypt: DMatrix<f64>,
        encrypt: DMatrix<f64>,
        kernel: DMatrix<f64>,
    ) -> Result<Self, KeyError> {
        let (n, m) = decrypt.shape();
        if n == 0 {
            return Err(KeyError::EmptyBlock);
        }
        if m <= n {
            return Err(KeyError::Invalid(format!(
                "M must be wide (n < m), got {n}x{m}"
            )));
        }
        if encrypt.shape() != (m, n) {
            return Err(KeyError::Invalid(format!(
                "G must be {m}x{n}, got {:?}",
                encrypt.shape()
            )));
        }
        if kernel.shape() != (m, m - n) {
            return Err(KeyError::Invalid(format!(
                "N must be {m}x{}, got {:?}",
                m - n,
                kernel.shape()
            )));
        }
        let key = Self {
            decrypt,
            encrypt,
            kernel,
        };
        key.check_identities()?;
        let sv = key.kernel.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smin > 1e-12 * smax.max(1.0)) {
            return Err(KeyError::Invalid("N is rank deficient".into()));
        }
        Ok(key)
    }

    /// Completes a decryption matrix `M` (full row rank) into a key:
    /// `G = Mᵀ(M·Mᵀ)⁻¹`, evaluated through the QR factorization `Mᵀ = Q·R`
    /// as `G = Q·R⁻ᵀ`, and `N` an orthonormal basis of `ker M`.
    pub fn from_decryption_matrix(decrypt: DMatrix<f64>) -> Result<Self, KeyError> {
        let (n, m) = decrypt.shape();
        if n == 0 {
            return Err(KeyError::EmptyBlock);
        }
        if m <= n {
            return Err(KeyError::Invalid(format!(
                "M must be wide (n < m), got {n}x{m}"
            )));
        }
        let qr = decrypt.transpose().qr();
        let q = qr.q(); // m×n, orthonormal columns spanning range(Mᵀ)
        let r = qr.r(); // n×n, M·Mᵀ = Rᵀ·R

        let sv = r.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        let condition = if smin > 0.0 {
            (smax / smin).powi(2)
        } else {
            f64::INFINITY
        };
        if !(condition <= MAX_CONDITION) {
            return Err(KeyError::IllConditioned { condition });
        }

        let encrypt_t = r
            .solve_upper_triangular(&q.transpose())
            .ok_or_else(|| KeyError::Invalid("singular R factor".into()))?;
        let encrypt = encrypt_t.transpose();
        let kernel = orthonormal_complement(&q, m - n);

        let key = Self {
            decrypt,
            encrypt,
            kernel,
        };
        key.check_identities()?;
        Ok(key)
    }

    /// Plain dimension `n`.
    pub fn plain_dim(&self) -> usize {
        self.decrypt.nrows()
    }

    /// Immersed dimension `m`.
    pub fn immersed_dim(&self) -> usize {
        self.decrypt.ncols()
    }

    /// `m − n`.
    pub fn expansion(&self) -> usize {
        self.immersed_dim() - self.plain_dim()
    }

    /// `M` (n×m).
    pub fn decryption_matrix(&self) -> &DMatrix<f64> {
        &self.decrypt
    }

    /// `G` (m×n).
    pub fn right_inverse(&self) -> &DMatrix<f64> {
        &self.encrypt
    }

    /// `N` (m×(m−n)).
    pub fn kernel_basis(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// `(‖M·G − I‖∞, ‖M·N‖∞)`.
    pub fn identity_residuals(&self) -> (f64, f64) {
        let mg = &self.decrypt * &self.encrypt;
        let mn = &self.decrypt * &self.kernel;
        (max_abs_from_identity(&mg), max_abs(&mn))
    }

    /// `cond₂(M·Mᵀ)`.
    pub fn condition_number(&self) -> f64 {
        let gram = &self.decrypt * self.decrypt.transpose();
        let eig = gram.symmetric_eigenvalues();
        eig.max() / eig.min()
    }

    fn check_identities(&self) -> Result<(), KeyError> {
        let (mg, mn) = self.identity_residuals();
        if !(mg <= IDENTITY_TOLERANCE) {
            return Err(KeyError::Invalid(format!(
                "‖M·G − I‖∞ = {mg:e} exceeds {IDENTITY_TOLERANCE:e}"
            )));
        }
        if !(mn <= IDENTITY_TOLERANCE) {
            return Err(KeyError::Invalid(format!(
                "‖M·N‖∞ = {mn:e} exceeds {IDENTITY_TOLERANCE:e}"
            )));
        }
        Ok(())
    }

    /// `out = G·w + N·r`.
    fn encrypt_into(&self, w: &[f64], r: &[f64], out: &mut [f64]) {
        linalg::matvec_into(&self.encrypt, w, out);
        linalg::matvec_axpy(&self.kernel, 1.0, r, out);
    }

    /// `out = M·w̃`.
    fn decrypt_into(&self, w: &[f64], out: &mut [f64]) {
        linalg::matvec_into(&self.decrypt, w, out);
    }
}

/// Picks `count` orthonormal vectors orthogonal to the columns of `q` by
/// Gram–Schmidt over the standard basis, best-separated candidates first.
fn orthonormal_complement(q: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let (m, n) = q.shape();
    let mut order: Vec<(usize, f64)> = (0..m)
        .map(|i| {
            let row: f64 = (0..n).map(|k| q[(i, k)] * q[(i, k)]).sum();
            (i, 1.0 - row)
        })
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    for (i, _) in order {
        if basis.len() == count {
            break;
        }
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        // Two passes of classical Gram–Schmidt.
        for _ in 0..2 {
            for k in 0..n {
                let col = q.column(k);
                let dot: f64 = col.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(col.iter()) {
                    *vi -= dot * ci;
                }
            }
            for b in &basis {
                let dot: f64 = b.iter().zip(&v).map(|(a, c)| a * c).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= dot * bi;
                }
            }
        }
        let norm = linalg::l2_norm(&v);
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    assert_eq!(basis.len(), count, "complement of a rank-deficient basis");
    DMatrix::from_fn(m, count, |i, j| basis[j][i])
}

/// Samples a key with `m = n + r`. `M` has i.i.d. standard-normal entries;
/// an ill-conditioned draw is re-sampled from the next attempt's stream.
pub fn generate_key(n: usize, r: usize, seed: u64) -> Result<ImmersionKey, KeyError> {
    if n == 0 {
        return Err(KeyError::EmptyBlock);
    }
    if r == 0 {
        return Err(KeyError::InvalidExpansion(r));
    }
    let m = n + r;
    let mut last = String::new();
    for attempt in 0..MAX_KEYGEN_ATTEMPTS {
        let mut rng = stream_rng(seed, Domain::Keys, u64::from(attempt));
        // Row-major fill so the stream maps to M the same way the blob does.
        let entries: Vec<f64> = (0..n * m)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let decrypt = DMatrix::from_row_slice(n, m, &entries);
        match ImmersionKey::from_decryption_matrix(decrypt) {
            Ok(key) => return Ok(key),
            Err(e @ (KeyError::IllConditioned { .. } | KeyError::Invalid(_))) => {
                last = e.to_string();
            }
            Err(e) => return Err(e),
        }
    }
    Err(KeyError::Generation {
        seed,
        attempts: MAX_KEYGEN_ATTEMPTS,
        reason: last,
    })
}

/// Position of one key block in the plain, immersed and randomness vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub plain: usize,
    pub immersed: usize,
    pub immersed_offset: usize,
    pub randomness_offset: usize,
}

impl Block {
    pub fn expansion(&self) -> usize {
        self.immersed - self.plain
    }
}

/// Block sizes for `total` parameters with at most `block_max` per block,
/// as even as possible (sizes differ by at most one).
pub fn block_sizes(total: usize, block_max: usize) -> Vec<usize> {
    if total == 0 || block_max == 0 {
        return Vec::new();
    }
    let count = total.div_ceil(block_max);
    let base = total / count;
    let extra = total % count;
    (0..count).map(|j| base + usize::from(j < extra)).collect()
}

/// Ordered per-block keys covering a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySet {
    keys: Vec<ImmersionKey>,
    layout: Vec<Block>,
}

impl KeySet {
    /// One key per entry of `sizes`, block `j` seeded with
    /// `derive_seed(seed, j)`.
    pub fn generate(sizes: &[usize], r: usize, seed: u64) -> Result<Self, KeyError> {
        if sizes.is_empty() {
            return Err(KeyError::EmptyLayout);
        }
        if let Some(index) = sizes.iter().position(|&s| s == 0) {
            return Err(KeyError::ZeroBlock { index });
        }
        if r == 0 {
            return Err(KeyError::InvalidExpansion(r));
        }
        let keys = par::try_map_range(sizes.len(), |j| {
            generate_key(sizes[j], r, derive_seed(seed, j as u64))
        })?;
        Self::from_keys(keys)
    }

    /// Keys for `total` parameters split into blocks of at most `block_max`.
    pub fn for_params(
        total: usize,
        block_max: usize,
        r: usize,
        seed: u64,
    ) -> Result<Self, KeyError> {
        if block_max == 0 {
            return Err(KeyError::ZeroBlock { index: 0 });
        }
        Self::generate(&block_sizes(total, block_max), r, seed)
    }

    /// Assembles a key set from ready-made keys, laid out contiguously.
    pub fn from_keys(keys: Vec<ImmersionKey>) -> Result<Self, KeyError> {
        if keys.is_empty() {
            return Err(KeyError::EmptyLayout);
        }
        let mut layout = Vec::with_capacity(keys.len());
        let (mut off, mut ioff, mut roff) = (0, 0, 0);
        for k in &keys {
            let b = Block {
                offset: off,
                plain: k.plain_dim(),
                immersed: k.immersed_dim(),
                immersed_offset: ioff,
                randomness_offset: roff,
            };
            off += b.plain;
            ioff += b.immersed;
            roff += b.expansion();
            layout.push(b);
        }
        Ok(Self { keys, layout })
    }

    pub fn keys(&self) -> &[ImmersionKey] {
        &self.keys
    }

    pub fn layout(&self) -> &[Block] {
        &self.layout
    }

    /// `Σ n_j`.
    pub fn plain_dim(&self) -> usize {
        self.layout.last().map_or(0, |b| b.offset + b.plain)
    }

    /// `Σ m_j`.
    pub fn immersed_dim(&self) -> usize {
        self.layout
            .last()
            .map_or(0, |b| b.immersed_offset + b.immersed)
    }

    /// `Σ (m_j − n_j)`, the length of `Rᵗ`.
    pub fn randomness_dim(&self) -> usize {
        self.immersed_dim() - self.plain_dim()
    }

    fn plain_lens(&self) -> Vec<usize> {
        self.layout.iter().map(|b| b.plain).collect()
    }

    fn immersed_lens(&self) -> Vec<usize> {
        self.layout.iter().map(|b| b.immersed).collect()
    }

    fn check_len(
        &self,
        what: &'static str,
        expected: usize,
        actual: usize,
    ) -> Result<(), KeyError> {
        if expected == actual {
            Ok(())
        } else {
            Err(KeyError::DimensionMismatch {
                what,
                expected,
                actual,
            })
        }
    }

    /// `π(w) = G·w + N·Rᵗ`, blockwise. The output carries `rr`'s round.
    pub fn encrypt(
        &self,
        w: &ParamVector,
        rr: &RoundRandomness,
    ) -> Result<EncryptedParamVector, KeyError> {
        self.check_len("plain parameter vector", self.plain_dim(), w.len())?;
        self.check_len("round randomness", self.randomness_dim(), rr.len())?;
        let w = w.values();
        let r = rr.values();
        let mut out = vec![0.0; self.immersed_dim()];
        par::for_each_block_mut(&mut out, &self.immersed_lens(), |j, chunk| {
            let b = &self.layout[j];
            self.keys[j].encrypt_into(
                &w[b.offset..b.offset + b.plain],
                &r[b.randomness_offset..b.randomness_offset + b.expansion()],
                chunk,
            );
        });
        Ok(EncryptedParamVector::new(out, rr.round()))
    }

    /// `π^L(w̃) = M·w̃`, blockwise.
    pub fn decrypt(&self, w: &EncryptedParamVector) -> Result<ParamVector, KeyError> {
        let out = self.decrypt_slice(w.values())?;
        ParamVector::new(out).map_err(|e| KeyError::Invalid(e.to_string()))
    }

    /// `M·x` on a raw immersed-coordinates slice.
    pub fn decrypt_slice(&self, w: &[f64]) -> Result<Vec<f64>, KeyError> {
        self.check_len("immersed parameter vector", self.immersed_dim(), w.len())?;
        let mut out = vec![0.0; self.plain_dim()];
        par::for_each_block_mut(&mut out, &self.plain_lens(), |j, chunk| {
            let b = &self.layout[j];
            self.keys[j].decrypt_into(&w[b.immersed_offset..b.immersed_offset + b.immersed], chunk);
        });
        Ok(out)
    }

    /// `w̃ += alpha · G·g`, blockwise; `g` is in plain coordinates.
    pub fn add_lifted(&self, alpha: f64, g: &[f64], w: &mut [f64]) -> Result<(), KeyError> {
        self.check_len("plain gradient", self.plain_dim(), g.len())?;
        self.check_len("immersed parameter vector", self.immersed_dim(), w.len())?;
        par::for_each_block_mut(w, &self.immersed_lens(), |j, chunk| {
            let b = &self.layout[j];
            linalg::matvec_axpy(
                self.keys[j].right_inverse(),
                alpha,
                &g[b.offset..b.offset + b.plain],
                chunk,
            );
        });
        Ok(())
    }

    /// `(I − G·M)·w̃`, the part of `w̃` that lies in `ker M`.
    pub fn kernel_component(&self, w: &[f64]) -> Result<Vec<f64>, KeyError> {
        let plain = self.decrypt_slice(w)?;
        let mut out = w.to_vec();
        self.add_lifted(-1.0, &plain, &mut out)?;
        Ok(out)
    }

    /// Serializes to the `SIKY` blob: magic, version byte, block count (u32
    /// LE), then per block `offset, n, m` (u32 LE) followed by `M`, `G`, `N`
    /// as row-major f64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let floats: usize = self
            .layout
            .iter()
            .map(|b| 2 * b.plain * b.immersed + b.immersed * b.expansion())
            .sum();
        let mut out = Vec::with_capacity(9 + 12 * self.keys.len() + 8 * floats);
        out.extend_from_slice(BLOB_MAGIC);
        out.push(BLOB_VERSION);
        out.extend_from_slice(&(self.keys.len() as u32).to_le_bytes());
        for (b, k) in self.layout.iter().zip(&self.keys) {
            for v in [b.offset, b.plain, b.immersed] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            for mat in [&k.decrypt, &k.encrypt, &k.kernel] {
                for i in 0..mat.nrows() {
                    for j in 0..mat.ncols() {
                        out.extend_from_slice(&mat[(i, j)].to_le_bytes());
                    }
                }
            }
        }
        out
    }

    /// Parses a `SIKY` blob and re-validates every key's identities.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KeyError> {
        let mut rd = BlobReader { bytes, pos: 0 };
        let magic = rd.take(4)?;
        if magic != BLOB_MAGIC {
            return Err(KeyError::Blob {
                offset: 0,
                reason: "bad magic".into(),
            });
        }
        let version = rd.take(1)?[0];
        if version != BLOB_VERSION {
            return Err(KeyError::Blob {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let count = rd.u32()? as usize;
        if count == 0 {
            return Err(KeyError::EmptyLayout);
        }
        let mut keys = Vec::with_capacity(count.min(1 << 16));
        let mut expected_offset = 0usize;
        for _ in 0..count {
            let at = rd.pos;
            let offset = rd.u32()? as usize;
            let n = rd.u32()? as usize;
            let m = rd.u32()? as usize;
            if offset != expected_offset {
                return Err(KeyError::Blob {
                    offset: at,
                    reason: format!("block offset {offset}, expected {expected_offset}"),
                });
            }
            if n == 0 || m <= n {
                return Err(KeyError::Blob {
                    offset: at,
                    reason: format!("invalid block shape n={n}, m={m}"),
                });
            }
            let decrypt = rd.matrix(n, m)?;
            let encrypt = rd.matrix(m, n)?;
            let kernel = rd.matrix(m, m - n)?;
            let key =
                ImmersionKey::from_parts(decrypt, encrypt, kernel).map_err(|e| KeyError::Blob {
                    offset: at,
                    reason: e.to_string(),
                })?;
            keys.push(key);
            expected_offset += n;
        }
        if rd.pos != bytes.len() {
            return Err(KeyError::Blob {
                offset: rd.pos,
                reason: "trailing bytes".into(),
            });
        }
        Self::from_keys(keys)
    }
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], KeyError> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(KeyError::Blob {
                offset: self.bytes.len(),
                reason: format!("truncated: needed {len} bytes at {}", self.pos),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, KeyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>, KeyError> {
        let raw = self.take(rows * cols * 8)?;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    }
}
