//! Primitive contracts: truncated hash, keyed PRF, hash commitments and the
//! fixed-length authenticated unit cipher used for every posted message.

use std::cell::Cell;

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Default hash output length in bytes (128-bit security level).
pub const DEFAULT_HASH_LEN: usize = 16;
/// PRF key length ψ in bytes.
pub const PRF_KEY_LEN: usize = 16;
/// PRF output length ι in bytes.
pub const PRF_OUTPUT_LEN: usize = 16;
/// Commitment randomness length λ in bytes.
pub const COMMIT_RANDOMNESS_LEN: usize = 16;
pub const SYM_KEY_LEN: usize = 16;

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
/// Every unit plaintext is framed as `len (2 bytes BE) || data || zero fill`.
pub const FRAME_LEN_BYTES: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("commitment randomness must be {expected} bytes, got {got}")]
    BadRandomnessLength { expected: usize, got: usize },
    #[error("unit decryption failed")]
    DecryptFailure,
    #[error("payload of {got} bytes exceeds unit capacity {capacity}")]
    PayloadTooLarge { got: usize, capacity: usize },
    #[error("expected {expected} key bytes, got {got}")]
    BadKeyLength { expected: usize, got: usize },
}

thread_local! {
    static HASH_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of hash invocations made on the current thread so far.
pub fn hash_invocations() -> u64 {
    HASH_CALLS.with(|c| c.get())
}

/// Runs `f` and returns its result together with the number of hash
/// invocations it performed on this thread.
pub fn count_hashes<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = hash_invocations();
    let out = f();
    (out, hash_invocations() - before)
}

/// SHA-256 over the concatenation of `parts`, truncated to `out_len` bytes.
pub fn hash_concat(parts: &[&[u8]], out_len: usize) -> Vec<u8> {
    assert!(out_len > 0 && out_len <= 32, "hash output length out of range");
    HASH_CALLS.with(|c| c.set(c.get() + 1));
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize()[..out_len].to_vec()
}

fn fill<const N: usize>(rng: &mut impl RngCore) -> [u8; N] {
    let mut b = [0u8; N];
    rng.fill_bytes(&mut b);
    b
}

/// PRF key k̂.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrfKey(#[serde(with = "hex_array")] pub [u8; PRF_KEY_LEN]);

impl PrfKey {
    pub fn random(rng: &mut impl RngCore) -> Self {
        PrfKey(fill(rng))
    }

    /// Accepts only keys in the key universe `{0,1}^ψ`.
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; PRF_KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::BadKeyLength {
            expected: PRF_KEY_LEN,
            got: bytes.len(),
        })?;
        Ok(PrfKey(arr))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl std::fmt::Debug for PrfKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PrfKey({})", hex::encode(self.0))
    }
}

/// Keyed hash PRF: `H(key || counter as 8-byte big-endian)`, ι = 128 bits.
pub fn prf(key: &PrfKey, counter: u64) -> [u8; PRF_OUTPUT_LEN] {
    let out = hash_concat(&[&key.0, &counter.to_be_bytes()], PRF_OUTPUT_LEN);
    out.try_into().expect("prf output length")
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Commitment(#[serde(with = "hex::serde")] pub Vec<u8>);

impl std::fmt::Debug for Commitment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Commitment({})", hex::encode(&self.0))
    }
}

/// Opening `(statement, randomness)` of a hash commitment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opening {
    #[serde(with = "hex::serde")]
    pub statement: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub randomness: Vec<u8>,
}

impl Opening {
    pub fn new(statement: Vec<u8>, randomness: Vec<u8>) -> Self {
        Opening { statement, randomness }
    }
}

pub fn commitment_randomness(rng: &mut impl RngCore) -> Vec<u8> {
    fill::<COMMIT_RANDOMNESS_LEN>(rng).to_vec()
}

/// `H(statement || randomness)`.
pub fn commit(statement: &[u8], randomness: &[u8]) -> Result<Commitment, CryptoError> {
    if randomness.len() != COMMIT_RANDOMNESS_LEN {
        return Err(CryptoError::BadRandomnessLength {
            expected: COMMIT_RANDOMNESS_LEN,
            got: randomness.len(),
        });
    }
    Ok(Commitment(hash_concat(&[statement, randomness], DEFAULT_HASH_LEN)))
}

pub fn commit_verify(c: &Commitment, o: &Opening) -> bool {
    match commit(&o.statement, &o.randomness) {
        Ok(recomputed) => recomputed == *c,
        Err(_) => false,
    }
}

/// Symmetric key k̄.
#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymKey(#[serde(with = "hex_array")] pub [u8; SYM_KEY_LEN]);

impl SymKey {
    pub fn random(rng: &mut impl RngCore) -> Self {
        SymKey(fill(rng))
    }
}

impl std::fmt::Debug for SymKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SymKey(..)")
    }
}

/// One ciphertext unit: `nonce || ciphertext || tag`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherUnit(#[serde(with = "hex::serde")] pub Vec<u8>);

impl CipherUnit {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl std::fmt::Debug for CipherUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CipherUnit({} bytes)", self.0.len())
    }
}

/// Byte length of a unit able to carry `capacity` payload bytes.
pub const fn unit_len_for(capacity: usize) -> usize {
    NONCE_LEN + FRAME_LEN_BYTES + capacity + TAG_LEN
}

/// Session unit layout. All units produced under one layout share a single
/// byte length, which also defines the sampling space U for pads and dummies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitLayout {
    pub capacity: usize,
}

impl UnitLayout {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity <= u16::MAX as usize, "unit capacity exceeds frame");
        UnitLayout { capacity }
    }

    pub fn unit_len(&self) -> usize {
        unit_len_for(self.capacity)
    }

    /// Encrypts one payload under a fresh random nonce.
    pub fn enc(
        &self,
        key: &SymKey,
        payload: &[u8],
        rng: &mut impl RngCore,
    ) -> Result<CipherUnit, CryptoError> {
        if payload.len() > self.capacity {
            return Err(CryptoError::PayloadTooLarge {
                got: payload.len(),
                capacity: self.capacity,
            });
        }
        let mut framed = Vec::with_capacity(FRAME_LEN_BYTES + self.capacity);
        framed.extend_from_slice(&(payload.len() as u16).to_be_bytes());
        framed.extend_from_slice(payload);
        framed.resize(FRAME_LEN_BYTES + self.capacity, 0);

        let nonce_bytes: [u8; NONCE_LEN] = fill(rng);
        let cipher = Aes128Gcm::new_from_slice(&key.0).expect("128-bit key");
        let ct = cipher
            .encrypt(&Nonce::from(nonce_bytes), framed.as_slice())
            .expect("aes-gcm encryption of bounded payload");
        let mut out = Vec::with_capacity(self.unit_len());
        out.extend_from_slice(&nonce_bytes);
        out.extend_from_slice(&ct);
        debug_assert_eq!(out.len(), self.unit_len());
        Ok(CipherUnit(out))
    }

    /// Uniformly random bytes of exactly the unit length.
    pub fn sample_unit(&self, rng: &mut impl RngCore) -> CipherUnit {
        let mut b = vec![0u8; self.unit_len()];
        rng.fill_bytes(&mut b);
        CipherUnit(b)
    }
}

/// Decrypts a unit of any layout. Fails on a wrong key, any tampering, or a
/// frame whose declared length does not fit.
pub fn dec(key: &SymKey, unit: &CipherUnit) -> Result<Vec<u8>, CryptoError> {
    let bytes = unit.as_bytes();
    if bytes.len() < unit_len_for(0) {
        return Err(CryptoError::DecryptFailure);
    }
    let (nonce, ct) = bytes.split_at(NONCE_LEN);
    let nonce: [u8; NONCE_LEN] = nonce.try_into().expect("nonce split");
    let cipher = Aes128Gcm::new_from_slice(&key.0).expect("128-bit key");
    let framed = cipher
        .decrypt(&Nonce::from(nonce), ct)
        .map_err(|_| CryptoError::DecryptFailure)?;
    let declared = u16::from_be_bytes([framed[0], framed[1]]) as usize;
    let body = &framed[FRAME_LEN_BYTES..];
    if declared > body.len() {
        return Err(CryptoError::DecryptFailure);
    }
    Ok(body[..declared].to_vec())
}

pub(crate) mod hex_array {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(v: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom(format!("expected {N} bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(11)
    }

    #[test]
    fn prf_fixed_vector() {
        // Frozen with an independent hashlib implementation.
        let out = prf(&PrfKey([0; 16]), 1);
        assert_eq!(hex::encode(out), "ed8b7b2c2c6bae3a650fe15699b56315");
    }

    #[test]
    fn prf_is_deterministic_and_counter_sensitive() {
        let k = PrfKey::random(&mut rng());
        assert_eq!(prf(&k, 1), prf(&k, 1));
        assert_ne!(prf(&k, 1), prf(&k, 2));
    }

    #[test]
    fn prf_key_separation() {
        let mut r = rng();
        for i in 0..1000u64 {
            let k1 = PrfKey::random(&mut r);
            let k2 = PrfKey::random(&mut r);
            assert_ne!(prf(&k1, i), prf(&k2, i));
        }
    }

    #[test]
    fn commit_empty_statement_vector() {
        let r: Vec<u8> = (0u8..16).collect();
        let c = commit(b"", &r).unwrap();
        assert_eq!(hex::encode(&c.0), "be45cb2605bf36bebde684841a28f0fd");
    }

    #[test]
    fn commit_rejects_bad_randomness() {
        assert_eq!(
            commit(b"x", &[0; 15]),
            Err(CryptoError::BadRandomnessLength { expected: 16, got: 15 })
        );
    }

    #[test]
    fn commit_open_and_tamper() {
        let r = commitment_randomness(&mut rng());
        let c = commit(b"statement", &r).unwrap();
        assert_eq!(c, commit(b"statement", &r).unwrap());
        assert_ne!(c, commit(b"statemenu", &r).unwrap());
        let mut o = Opening::new(b"statement".to_vec(), r.clone());
        assert!(commit_verify(&c, &o));
        o.statement[0] ^= 1;
        assert!(!commit_verify(&c, &o));
        let mut o = Opening::new(b"statement".to_vec(), r);
        o.randomness[3] ^= 0x80;
        assert!(!commit_verify(&c, &o));
    }

    #[test]
    fn commitment_binding_search() {
        let mut r = rng();
        let rand = commitment_randomness(&mut r);
        let c = commit(b"agreed", &rand).unwrap();
        for i in 0u32..(1 << 16) {
            let mut cand = commitment_randomness(&mut r);
            cand[..4].copy_from_slice(&i.to_be_bytes());
            let o = Opening::new(format!("other-{}", i % 7).into_bytes(), cand);
            assert!(!commit_verify(&c, &o));
        }
    }

    #[test]
    fn unit_round_trip_and_randomization() {
        let mut r = rng();
        let layout = UnitLayout::new(20);
        let k = SymKey::random(&mut r);
        let mut payload = [0u8; 16];
        r.fill_bytes(&mut payload);
        let a = layout.enc(&k, &payload, &mut r).unwrap();
        let b = layout.enc(&k, &payload, &mut r).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.len(), b.len());
        assert_eq!(a.len(), layout.unit_len());
        assert_eq!(dec(&k, &a).unwrap(), payload);
        let short = layout.enc(&k, &payload[..3], &mut r).unwrap();
        assert_eq!(short.len(), a.len());
        assert_eq!(dec(&k, &short).unwrap(), &payload[..3]);
        assert_eq!(dec(&k, &layout.enc(&k, &[], &mut r).unwrap()).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn wrong_key_fails() {
        let mut r = rng();
        let layout = UnitLayout::new(16);
        let k = SymKey::random(&mut r);
        let other = SymKey::random(&mut r);
        let u = layout.enc(&k, b"0123456789abcdef", &mut r).unwrap();
        assert_eq!(dec(&other, &u), Err(CryptoError::DecryptFailure));
    }

    #[test]
    fn every_single_byte_mutation_fails() {
        let mut r = rng();
        let layout = UnitLayout::new(16);
        let k = SymKey::random(&mut r);
        let u = layout.enc(&k, b"payload", &mut r).unwrap();
        for pos in 0..u.len() {
            let mut t = u.clone();
            t.0[pos] ^= 0x01;
            assert_eq!(dec(&k, &t), Err(CryptoError::DecryptFailure), "pos {pos}");
        }
    }

    #[test]
    fn oversize_payload_rejected() {
        let mut r = rng();
        let layout = UnitLayout::new(4);
        let k = SymKey::random(&mut r);
        assert!(matches!(
            layout.enc(&k, b"12345", &mut r),
            Err(CryptoError::PayloadTooLarge { .. })
        ));
    }

    #[test]
    fn sampled_units_match_real_length() {
        let layout = UnitLayout::new(20);
        let mut r = rng();
        let k = SymKey::random(&mut r);
        let real = layout.enc(&k, b"x", &mut r).unwrap();
        let s1 = layout.sample_unit(&mut r);
        let s2 = layout.sample_unit(&mut r);
        assert_eq!(s1.len(), real.len());
        assert_ne!(s1, s2);
        let again = layout.sample_unit(&mut ChaCha20Rng::seed_from_u64(5));
        assert_eq!(again, layout.sample_unit(&mut ChaCha20Rng::seed_from_u64(5)));
        // Random bytes do not authenticate.
        assert!(dec(&k, &s1).is_err());
    }

    #[test]
    fn hash_counter_tracks_calls() {
        let (_, n) = count_hashes(|| {
            hash_concat(&[b"a"], 16);
            prf(&PrfKey([1; 16]), 3);
        });
        assert_eq!(n, 2);
    }
}
