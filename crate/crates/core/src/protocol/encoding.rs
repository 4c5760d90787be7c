//! Proof vectors as cipher units.
//!
//! Entry layout (`pi_act = h + 2` units): block, sibling block, `h - 1`
//! sibling digests, 4-byte leaf index. Each entry is followed by `pad_pi`
//! uniformly random units. Every unit of a session has the same length.

use rand::RngCore;

use crate::crypto::{dec, CipherUnit, CryptoError, SymKey, UnitLayout, PRF_KEY_LEN};
use crate::merkle::{self, Digest, MerklePath};
use crate::por::{ProofEntry, ProofVector, PublicParams, INDEX_LEN};

/// Unit layout for a session with the given block and digest lengths.
pub fn session_layout(block_len: usize, hash_len: usize) -> UnitLayout {
    UnitLayout::new(block_len.max(hash_len).max(PRF_KEY_LEN).max(INDEX_LEN))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProofShape {
    pub phi: u32,
    pub height: usize,
    pub hash_len: usize,
    pub pad_pi: u32,
}

impl ProofShape {
    pub fn new(pp: &PublicParams, pad_pi: u32) -> Self {
        ProofShape {
            phi: pp.phi,
            height: merkle::height_for(pp.m as usize),
            hash_len: pp.sigma.as_bytes().len(),
            pad_pi,
        }
    }

    pub fn real_units(&self) -> usize {
        self.height + 2
    }

    pub fn stride(&self) -> usize {
        self.real_units() + self.pad_pi as usize
    }

    pub fn total_units(&self) -> usize {
        self.phi as usize * self.stride()
    }
}

pub fn encode_proof_vector(
    pi: &ProofVector,
    k_bar: &SymKey,
    layout: &UnitLayout,
    pad_pi: u32,
    rng: &mut impl RngCore,
) -> Result<Vec<CipherUnit>, CryptoError> {
    let mut out = Vec::new();
    for e in &pi.entries {
        out.push(layout.enc(k_bar, &e.block, rng)?);
        out.push(layout.enc(k_bar, &e.path.sibling_block, rng)?);
        for d in &e.path.sibling_digests {
            out.push(layout.enc(k_bar, d.as_bytes(), rng)?);
        }
        out.push(layout.enc(k_bar, &e.path.leaf_index.to_be_bytes(), rng)?);
        for _ in 0..pad_pi {
            out.push(layout.sample_unit(rng));
        }
    }
    Ok(out)
}

/// Random units shaped like a full padded proof vector.
pub fn dummy_proof_vector(shape: &ProofShape, layout: &UnitLayout, rng: &mut impl RngCore) -> Vec<CipherUnit> {
    (0..shape.total_units()).map(|_| layout.sample_unit(rng)).collect()
}

/// Decrypts entry `g` (1-based), skipping the pads of that entry only.
/// `None` if the entry is missing, fails to decrypt or is malformed.
pub fn decode_entry(units: &[CipherUnit], g: u32, shape: &ProofShape, k_bar: &SymKey) -> Option<ProofEntry> {
    if g == 0 || g > shape.phi {
        return None;
    }
    let start = (g as usize - 1) * shape.stride();
    let real = units.get(start..start + shape.real_units())?;
    let plain = real.iter().map(|u| dec(k_bar, u).ok()).collect::<Option<Vec<_>>>()?;

    let block = plain[0].clone();
    let sibling_block = plain[1].clone();
    if block.is_empty() || block.len() != sibling_block.len() {
        return None;
    }
    let digests = &plain[2..plain.len() - 1];
    if digests.iter().any(|d| d.len() != shape.hash_len) {
        return None;
    }
    let leaf_index = u32::from_be_bytes(plain[plain.len() - 1].as_slice().try_into().ok()?);
    Some(ProofEntry {
        block: block.clone(),
        path: MerklePath {
            leaf_index,
            leaf_block: block,
            sibling_block,
            sibling_digests: digests.iter().map(|d| Digest(d.clone())).collect(),
        },
    })
}

/// Decodes entries in order up to the first undecodable one, whose 1-based
/// position is returned alongside the decoded prefix.
pub fn decode_proof_vector(units: &[CipherUnit], shape: &ProofShape, k_bar: &SymKey) -> (ProofVector, Option<u32>) {
    let mut entries = Vec::with_capacity(shape.phi as usize);
    for g in 1..=shape.phi {
        match decode_entry(units, g, shape, k_bar) {
            Some(e) => entries.push(e),
            None => return (ProofVector { entries }, Some(g)),
        }
    }
    (ProofVector { entries }, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::por::{self, Challenge, IdentityCodec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn fixture(pad_pi: u32) -> (ProofVector, PublicParams, ProofShape, UnitLayout, SymKey, ChaCha20Rng) {
        let mut r = ChaCha20Rng::seed_from_u64(4);
        let mut f = vec![0u8; 64 * 16];
        r.fill_bytes(&mut f);
        let (u, pp) = por::setup(&f, 16, 8, &IdentityCodec).unwrap();
        let k = por::gen_query(&mut r);
        let pi = por::prove(&u, &k, &pp).unwrap();
        let shape = ProofShape::new(&pp, pad_pi);
        let layout = session_layout(u.block_len(), 16);
        (pi, pp, shape, layout, SymKey::random(&mut r), r)
    }

    #[test]
    fn round_trip_with_pads() {
        for pad in [0, 3] {
            let (pi, pp, shape, layout, key, mut r) = fixture(pad);
            let units = encode_proof_vector(&pi, &key, &layout, pad, &mut r).unwrap();
            assert_eq!(units.len(), shape.total_units());
            assert!(units.iter().all(|u| u.len() == layout.unit_len()));
            let (back, fail) = decode_proof_vector(&units, &shape, &key);
            assert_eq!(fail, None);
            assert_eq!(back, pi);
            let idx: Vec<u64> = pi.entries.iter().map(|e| e.path.leaf_index as u64).collect();
            assert!(por::verify(&back, &Challenge::Indices(idx), &pp).accepted);
        }
    }

    #[test]
    fn dummy_has_same_shape_and_does_not_decode() {
        let (pi, _, shape, layout, key, mut r) = fixture(2);
        let real = encode_proof_vector(&pi, &key, &layout, 2, &mut r).unwrap();
        let dummy = dummy_proof_vector(&shape, &layout, &mut r);
        assert_eq!(real.len(), dummy.len());
        assert!(dummy.iter().all(|u| u.len() == layout.unit_len()));
        assert_eq!(decode_proof_vector(&dummy, &shape, &key).1, Some(1));
    }

    #[test]
    fn damaged_entry_reports_its_position() {
        let (pi, _, shape, layout, key, mut r) = fixture(1);
        let mut units = encode_proof_vector(&pi, &key, &layout, 1, &mut r).unwrap();
        // Pads are never decrypted.
        units[shape.real_units()] = CipherUnit(vec![0; 3]);
        assert_eq!(decode_proof_vector(&units, &shape, &key).1, None);
        units[2 * shape.stride() + 1].0[20] ^= 1;
        let (prefix, fail) = decode_proof_vector(&units, &shape, &key);
        assert_eq!(fail, Some(3));
        assert_eq!(prefix.len(), 2);
        assert!(decode_entry(&units, 4, &shape, &key).is_some());
        assert!(decode_entry(&units, 0, &shape, &key).is_none());
        assert!(decode_entry(&units, 9, &shape, &key).is_none());
        units.truncate(shape.stride() * 5);
        assert!(decode_entry(&units, 6, &shape, &key).is_none());
    }
}
