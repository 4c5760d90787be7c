//! Merkle-tree proof of retrievability with PRF-derived challenges.
//!
//! The client encodes the file, splits it into `m` payloads, suffixes each
//! with its 4-byte big-endian index and commits to the blocks with a Merkle
//! root. A query is a fresh PRF key; both sides derive the challenged
//! indices `q_i = (PRF(k, i) mod m) + 1` for `i = 1..=phi`. Verification
//! reports the first failing proof position so a third party can re-check
//! that single entry.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{prf, PrfKey, DEFAULT_HASH_LEN, PRF_KEY_LEN, PRF_OUTPUT_LEN};
use crate::merkle::{self, Digest, MerkleError, MerklePath, MerkleTree};

pub const INDEX_LEN: usize = 4;
pub const DEFAULT_BLOCK_PAYLOAD_LEN: usize = 16;
pub const DEFAULT_PHI: u32 = 460;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PorError {
    #[error("file is empty")]
    EmptyFile,
    #[error("challenge count {phi} must be in [1, {m}]")]
    InvalidPhi { phi: u32, m: u32 },
    #[error("encoded file has {file_blocks} blocks but parameters declare {declared}")]
    ParamMismatch { file_blocks: usize, declared: u32 },
    #[error("block payload length must be positive")]
    ZeroPayloadLength,
    #[error("file has more blocks than a 4-byte index can address")]
    TooManyBlocks,
    #[error("malformed encoded file: {0}")]
    MalformedFile(&'static str),
    #[error(transparent)]
    Merkle(#[from] MerkleError),
}

/// Erasure-coding hook applied to the raw file before it is split into blocks.
pub trait ErasureCodec {
    fn name(&self) -> &'static str;
    /// Encodes `file` into the byte string that is split into `chunk_len` payloads.
    fn encode(&self, file: &[u8], chunk_len: usize) -> Vec<u8>;
}

pub struct IdentityCodec;

impl ErasureCodec for IdentityCodec {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn encode(&self, file: &[u8], _chunk_len: usize) -> Vec<u8> {
        file.to_vec()
    }
}

/// Appends one XOR parity chunk after every group of four data chunks.
pub struct XorParityCodec;

impl XorParityCodec {
    pub const GROUP: usize = 4;

    /// Rebuilds data chunk `lost` (0-based within `group`) from the other
    /// chunks of its group and the group's parity chunk.
    pub fn repair(group: &[&[u8]], parity: &[u8], lost: usize) -> Vec<u8> {
        let mut out = parity.to_vec();
        for (i, c) in group.iter().enumerate() {
            if i != lost {
                out.iter_mut().zip(c.iter()).for_each(|(o, b)| *o ^= b);
            }
        }
        out
    }
}

impl ErasureCodec for XorParityCodec {
    fn name(&self) -> &'static str {
        "xor-parity"
    }

    fn encode(&self, file: &[u8], chunk_len: usize) -> Vec<u8> {
        let mut out = Vec::new();
        for group in file.chunks(chunk_len * Self::GROUP) {
            let mut parity = vec![0u8; chunk_len];
            for chunk in group.chunks(chunk_len) {
                let mut padded = chunk.to_vec();
                padded.resize(chunk_len, 0);
                parity.iter_mut().zip(&padded).for_each(|(p, b)| *p ^= b);
                out.extend_from_slice(&padded);
            }
            out.extend_from_slice(&parity);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodecKind {
    #[default]
    Identity,
    XorParity,
}

impl CodecKind {
    pub fn codec(self) -> Box<dyn ErasureCodec> {
        match self {
            CodecKind::Identity => Box::new(IdentityCodec),
            CodecKind::XorParity => Box::new(XorParityCodec),
        }
    }
}

/// The index-suffixed block vector `u*` held by the server.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedFile {
    pub blocks: Vec<Vec<u8>>,
    pub block_payload_len: usize,
}

impl EncodedFile {
    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_len(&self) -> usize {
        self.block_payload_len + INDEX_LEN
    }

    /// Header `m (4 bytes BE) || block_payload_len (4 bytes BE)` followed by
    /// the concatenated blocks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.m() * self.block_len());
        out.extend_from_slice(&(self.m() as u32).to_be_bytes());
        out.extend_from_slice(&(self.block_payload_len as u32).to_be_bytes());
        for b in &self.blocks {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PorError> {
        if bytes.len() < 8 {
            return Err(PorError::MalformedFile("short header"));
        }
        let m = u32::from_be_bytes(bytes[..4].try_into().expect("4")) as usize;
        let payload = u32::from_be_bytes(bytes[4..8].try_into().expect("4")) as usize;
        let block_len = payload + INDEX_LEN;
        let body = &bytes[8..];
        if body.len() != m * block_len {
            return Err(PorError::MalformedFile("body length does not match header"));
        }
        Ok(EncodedFile {
            blocks: body.chunks_exact(block_len).map(<[u8]>::to_vec).collect(),
            block_payload_len: payload,
        })
    }
}

/// Trailing index field of a block, if the block is long enough to carry one.
pub fn block_index(block: &[u8]) -> Option<u32> {
    let at = block.len().checked_sub(INDEX_LEN)?;
    Some(u32::from_be_bytes(block[at..].try_into().expect("4")))
}

/// PRF description ζ: key, counter and output lengths in bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zeta {
    pub psi: u32,
    pub eta: u32,
    pub iota: u32,
}

impl Default for Zeta {
    fn default() -> Self {
        Zeta {
            psi: (PRF_KEY_LEN * 8) as u32,
            eta: 64,
            iota: (PRF_OUTPUT_LEN * 8) as u32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicParams {
    pub sigma: Digest,
    pub phi: u32,
    pub m: u32,
    pub zeta: Zeta,
}

pub fn setup(
    file: &[u8],
    block_payload_len: usize,
    phi: u32,
    codec: &dyn ErasureCodec,
) -> Result<(EncodedFile, PublicParams), PorError> {
    if file.is_empty() {
        return Err(PorError::EmptyFile);
    }
    if block_payload_len == 0 {
        return Err(PorError::ZeroPayloadLength);
    }
    let encoded = codec.encode(file, block_payload_len);
    let m = encoded.len().div_ceil(block_payload_len);
    let m32 = u32::try_from(m).map_err(|_| PorError::TooManyBlocks)?;
    if phi == 0 || phi > m32 {
        return Err(PorError::InvalidPhi { phi, m: m32 });
    }
    let blocks: Vec<Vec<u8>> = encoded
        .chunks(block_payload_len)
        .enumerate()
        .map(|(i, chunk)| {
            let mut b = Vec::with_capacity(block_payload_len + INDEX_LEN);
            b.extend_from_slice(chunk);
            b.resize(block_payload_len, 0);
            b.extend_from_slice(&(i as u32 + 1).to_be_bytes());
            b
        })
        .collect();
    let (_, sigma) = merkle::gen_tree_with_hash_len(&blocks, DEFAULT_HASH_LEN)?;
    let file = EncodedFile { blocks, block_payload_len };
    let pp = PublicParams { sigma, phi, m: m32, zeta: Zeta::default() };
    Ok((file, pp))
}

pub fn gen_query(rng: &mut impl RngCore) -> PrfKey {
    PrfKey::random(rng)
}

/// `q_i = (PRF(key, i) mod m) + 1` for `i = 1..=phi`, reading the PRF output
/// as an unsigned big-endian integer.
pub fn derive_indices(key: &PrfKey, phi: u32, m: u32) -> Vec<u64> {
    (1..=phi as u64).map(|i| derive_index(key, i, m)).collect()
}

pub fn derive_index(key: &PrfKey, i: u64, m: u32) -> u64 {
    let out = u128::from_be_bytes(prf(key, i));
    (out % m as u128) as u64 + 1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofEntry {
    #[serde(with = "hex::serde")]
    pub block: Vec<u8>,
    pub path: MerklePath,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofVector {
    pub entries: Vec<ProofEntry>,
}

impl ProofVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Server-side prover: the stored blocks plus the tree built over them at
/// setup time. Blocks are served from storage, so losing or corrupting a
/// stored block shows up in the proofs even though the cached tree is intact.
pub struct Prover {
    pub file: EncodedFile,
    tree: MerkleTree,
}

impl Prover {
    pub fn new(file: EncodedFile) -> Result<Self, PorError> {
        let (tree, _) = merkle::gen_tree_with_hash_len(&file.blocks, DEFAULT_HASH_LEN)?;
        Ok(Prover { file, tree })
    }

    pub fn root(&self) -> Digest {
        self.tree.root()
    }

    pub fn tree(&self) -> &MerkleTree {
        &self.tree
    }

    pub fn prove(&self, key: &PrfKey, pp: &PublicParams) -> Result<ProofVector, PorError> {
        if self.file.m() != pp.m as usize {
            return Err(PorError::ParamMismatch { file_blocks: self.file.m(), declared: pp.m });
        }
        derive_indices(key, pp.phi, pp.m)
            .into_iter()
            .map(|q| self.prove_index(q))
            .collect::<Result<Vec<_>, _>>()
            .map(|entries| ProofVector { entries })
    }

    pub fn prove_index(&self, q: u64) -> Result<ProofEntry, PorError> {
        let mut path = merkle::prove(&self.tree, q)?;
        let pos = (q - 1) as usize;
        let block = self.file.blocks[pos].clone();
        path.leaf_block = block.clone();
        if let Some(sib) = self.file.blocks.get(pos ^ 1) {
            path.sibling_block = sib.clone();
        }
        Ok(ProofEntry { block, path })
    }
}

/// Stateless convenience wrapper; builds the tree on every call.
pub fn prove(file: &EncodedFile, key: &PrfKey, pp: &PublicParams) -> Result<ProofVector, PorError> {
    Prover::new(file.clone())?.prove(key, pp)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Challenge {
    Key(PrfKey),
    Indices(Vec<u64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub failing_index: Option<u32>,
}

impl Verdict {
    pub fn accept() -> Self {
        Verdict { accepted: true, failing_index: None }
    }

    pub fn reject(at: usize) -> Self {
        Verdict { accepted: false, failing_index: Some(at as u32) }
    }
}

/// Two-pass verification. The first pass checks every block's embedded index
/// (and the path's declared leaf) against the expected challenge; the second
/// checks every Merkle path against `sigma`. The first failure of either
/// pass is reported as a 1-based position. A vector whose length differs
/// from the challenge count fails at the first missing or surplus position.
///
/// An explicit single-index challenge with a single entry is the
/// proof-of-misbehaviour check: it costs one path recomputation.
pub fn verify(pi: &ProofVector, challenge: &Challenge, pp: &PublicParams) -> Verdict {
    let expected = match challenge {
        Challenge::Key(k) => derive_indices(k, pp.phi, pp.m),
        Challenge::Indices(v) => v.clone(),
    };
    let n = pi.len().min(expected.len());

    for (i, (entry, &q)) in pi.entries.iter().zip(&expected).enumerate() {
        let index_ok = block_index(&entry.block).map(u64::from) == Some(q)
            && u64::from(entry.path.leaf_index) == q;
        if !index_ok {
            return Verdict::reject(i + 1);
        }
    }
    for (i, entry) in pi.entries.iter().take(n).enumerate() {
        if entry.block != entry.path.leaf_block || !merkle::verify(&entry.path, &pp.sigma) {
            return Verdict::reject(i + 1);
        }
    }
    if pi.len() != expected.len() {
        return Verdict::reject(n + 1);
    }
    Verdict::accept()
}

/// Single-proof check at explicit index `q`.
pub fn verify_single(entry: &ProofEntry, q: u64, pp: &PublicParams) -> Verdict {
    verify(
        &ProofVector { entries: vec![entry.clone()] },
        &Challenge::Indices(vec![q]),
        pp,
    )
}
