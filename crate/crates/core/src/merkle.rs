//! Binary Merkle tree whose leaves are raw blocks hashed pairwise.
//!
//! ```text
//!            root = H(h12 || h34)
//!           /                    \
//!   h12 = H(b1 || b2)      h34 = H(b3 || b4)
//!     /        \             /        \
//!    b1        b2           b3        b4
//! ```
//!
//! Leaf counts that are not a power of two are padded with all-zero blocks
//! (minimum two leaves). A path carries the leaf block, its sibling block and
//! one sibling digest per level above the first; left/right placement during
//! verification is taken from the bits of `leaf_index - 1`, least
//! significant bit first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_concat, DEFAULT_HASH_LEN};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot build a tree over zero blocks")]
    EmptyInput,
    #[error("block {index} has length {got}, expected {expected}")]
    UnequalBlockLength { index: usize, expected: usize, got: usize },
    #[error("leaf index {index} outside [1, {leaves}]")]
    IndexOutOfRange { index: u64, leaves: usize },
    #[error("malformed path encoding")]
    MalformedPath,
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Digest(#[serde(with = "hex::serde")] pub Vec<u8>);

impl Digest {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

#[derive(Clone, Debug)]
pub struct MerkleTree {
    block_len: usize,
    hash_len: usize,
    leaf_count: usize,
    padded: usize,
    // Flat leaf storage, `padded * block_len` bytes.
    leaves: Vec<u8>,
    // levels[0] holds the pair hashes, the last level holds the root.
    levels: Vec<Vec<u8>>,
}

impl MerkleTree {
    pub fn root(&self) -> Digest {
        Digest(self.levels.last().expect("non-empty tree").clone())
    }

    /// `log2` of the padded leaf count; equals the number of sibling
    /// elements in every path.
    pub fn height(&self) -> usize {
        self.levels.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn padded_leaf_count(&self) -> usize {
        self.padded
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn hash_len(&self) -> usize {
        self.hash_len
    }

    /// Leaf at 0-based position `pos` (padding leaves included).
    fn leaf(&self, pos: usize) -> &[u8] {
        &self.leaves[pos * self.block_len..(pos + 1) * self.block_len]
    }

    fn node(&self, level: usize, pos: usize) -> &[u8] {
        &self.levels[level][pos * self.hash_len..(pos + 1) * self.hash_len]
    }
}

/// Padded leaf count for `m` blocks: next power of two, at least two.
pub fn padded_leaf_count(m: usize) -> usize {
    m.max(2).next_power_of_two()
}

/// Tree height for `m` blocks.
pub fn height_for(m: usize) -> usize {
    padded_leaf_count(m).trailing_zeros() as usize
}

pub fn gen_tree<B: AsRef<[u8]>>(blocks: &[B]) -> Result<(MerkleTree, Digest), MerkleError> {
    gen_tree_with_hash_len(blocks, DEFAULT_HASH_LEN)
}

pub fn gen_tree_with_hash_len<B: AsRef<[u8]>>(
    blocks: &[B],
    hash_len: usize,
) -> Result<(MerkleTree, Digest), MerkleError> {
    let first = blocks.first().ok_or(MerkleError::EmptyInput)?;
    let block_len = first.as_ref().len();
    let padded = padded_leaf_count(blocks.len());
    let mut leaves = Vec::with_capacity(padded * block_len);
    for (index, b) in blocks.iter().enumerate() {
        let b = b.as_ref();
        if b.len() != block_len {
            return Err(MerkleError::UnequalBlockLength {
                index: index + 1,
                expected: block_len,
                got: b.len(),
            });
        }
        leaves.extend_from_slice(b);
    }
    leaves.resize(padded * block_len, 0);

    let mut levels: Vec<Vec<u8>> = Vec::new();
    let mut width = padded / 2;
    let mut level = Vec::with_capacity(width * hash_len);
    for pair in leaves.chunks_exact(2 * block_len) {
        let (l, r) = pair.split_at(block_len);
        level.extend_from_slice(&hash_concat(&[l, r], hash_len));
    }
    levels.push(level);
    while width > 1 {
        let prev = levels.last().expect("level");
        let mut next = Vec::with_capacity(width / 2 * hash_len);
        for pair in prev.chunks_exact(2 * hash_len) {
            let (l, r) = pair.split_at(hash_len);
            next.extend_from_slice(&hash_concat(&[l, r], hash_len));
        }
        levels.push(next);
        width /= 2;
    }

    let tree = MerkleTree {
        block_len,
        hash_len,
        leaf_count: blocks.len(),
        padded,
        leaves,
        levels,
    };
    let root = tree.root();
    Ok((tree, root))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerklePath {
    pub leaf_index: u32,
    #[serde(with = "hex::serde")]
    pub leaf_block: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub sibling_block: Vec<u8>,
    pub sibling_digests: Vec<Digest>,
}

impl MerklePath {
    /// Number of sibling elements (sibling block plus digests).
    pub fn len(&self) -> usize {
        1 + self.sibling_digests.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `leaf_index (4 bytes BE) || leaf_block || sibling_block || digests`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.leaf_index.to_be_bytes());
        out.extend_from_slice(&self.leaf_block);
        out.extend_from_slice(&self.sibling_block);
        for d in &self.sibling_digests {
            out.extend_from_slice(d.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], block_len: usize, hash_len: usize) -> Result<Self, MerkleError> {
        let fixed = 4 + 2 * block_len;
        if bytes.len() < fixed || hash_len == 0 || !(bytes.len() - fixed).is_multiple_of(hash_len) {
            return Err(MerkleError::MalformedPath);
        }
        let leaf_index = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
        let leaf_block = bytes[4..4 + block_len].to_vec();
        let sibling_block = bytes[4 + block_len..fixed].to_vec();
        let sibling_digests = bytes[fixed..]
            .chunks_exact(hash_len)
            .map(|c| Digest(c.to_vec()))
            .collect();
        Ok(MerklePath { leaf_index, leaf_block, sibling_block, sibling_digests })
    }
}

/// Membership proof for the 1-based leaf `index`.
pub fn prove(tree: &MerkleTree, index: u64) -> Result<MerklePath, MerkleError> {
    if index == 0 || index > tree.leaf_count as u64 {
        return Err(MerkleError::IndexOutOfRange { index, leaves: tree.leaf_count });
    }
    let pos = (index - 1) as usize;
    let sibling_digests = (1..tree.height())
        .map(|k| Digest(tree.node(k - 1, (pos >> k) ^ 1).to_vec()))
        .collect();
    Ok(MerklePath {
        leaf_index: index as u32,
        leaf_block: tree.leaf(pos).to_vec(),
        sibling_block: tree.leaf(pos ^ 1).to_vec(),
        sibling_digests,
    })
}

/// Recomputes the root from `path` and compares it with `root`. The hash
/// output length is taken from `root`. Malformed paths verify as false.
pub fn verify(path: &MerklePath, root: &Digest) -> bool {
    let hash_len = root.0.len();
    if hash_len == 0 || hash_len > 32 || path.leaf_index == 0 {
        return false;
    }
    if path.leaf_block.len() != path.sibling_block.len() {
        return false;
    }
    let height = path.len();
    let pos = (path.leaf_index - 1) as u64;
    if height < 64 && pos >> height != 0 {
        return false;
    }
    let mut cur = if pos & 1 == 0 {
        hash_concat(&[&path.leaf_block, &path.sibling_block], hash_len)
    } else {
        hash_concat(&[&path.sibling_block, &path.leaf_block], hash_len)
    };
    for (k, d) in path.sibling_digests.iter().enumerate() {
        if d.0.len() != hash_len {
            return false;
        }
        cur = if (pos >> (k + 1)) & 1 == 0 {
            hash_concat(&[&cur, &d.0], hash_len)
        } else {
            hash_concat(&[&d.0, &cur], hash_len)
        };
    }
    cur == root.0
}
