//! Statement agreement: two parties bind to a private statement by posting
//! matching hash commitments from their own addresses. Anyone holding the
//! opening can later check it against both recorded commitments, either
//! through the ledger or offline against a session snapshot.

use rand::RngCore;
use thiserror::Error;

use crate::crypto::{commit, commit_verify, commitment_randomness, Commitment, Opening};
use crate::ledger::{Address, Ledger, LedgerError, SapSessionState, SessionId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SapError {
    #[error("unknown address {0}")]
    UnknownAddress(Address),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Canonical statement encoding: `tag (1 byte) || len (4 bytes BE) || value`
/// triples in a fixed field order.
#[derive(Default)]
pub struct StatementEncoder {
    buf: Vec<u8>,
}

impl StatementEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, tag: u8, value: &[u8]) -> Self {
        self.buf.push(tag);
        self.buf.extend_from_slice(&(value.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(value);
        self
    }

    pub fn u64_field(self, tag: u8, v: u64) -> Self {
        self.field(tag, &v.to_be_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed statement: {0}")]
pub struct DecodeError(pub String);

pub struct StatementDecoder<'a> {
    rest: &'a [u8],
}

impl<'a> StatementDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        StatementDecoder { rest: bytes }
    }

    pub fn field(&mut self, tag: u8) -> Result<&'a [u8], DecodeError> {
        if self.rest.len() < 5 {
            return Err(DecodeError(format!("truncated before field {tag}")));
        }
        if self.rest[0] != tag {
            return Err(DecodeError(format!("expected tag {tag}, found {}", self.rest[0])));
        }
        let len = u32::from_be_bytes(self.rest[1..5].try_into().expect("4")) as usize;
        let body = &self.rest[5..];
        if body.len() < len {
            return Err(DecodeError(format!("field {tag} overruns input")));
        }
        let (value, rest) = body.split_at(len);
        self.rest = rest;
        Ok(value)
    }

    pub fn u64_field(&mut self, tag: u8) -> Result<u64, DecodeError> {
        let v = self.field(tag)?;
        let arr: [u8; 8] = v.try_into().map_err(|_| DecodeError(format!("field {tag} is not 8 bytes")))?;
        Ok(u64::from_be_bytes(arr))
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(DecodeError("trailing bytes".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SapInit {
    pub randomness: Vec<u8>,
    pub g_client: Commitment,
    pub session: SessionId,
}

/// Deploys a session for both parties and posts `commit(statement, r)`
/// from the client's address. The returned randomness travels to the
/// server out of band together with the statement.
pub fn sap_init(
    ledger: &mut Ledger,
    addr_client: &Address,
    addr_server: &Address,
    statement: &[u8],
    rng: &mut impl RngCore,
) -> Result<SapInit, SapError> {
    for a in [addr_client, addr_server] {
        if ledger.balance(a).is_none() {
            return Err(SapError::UnknownAddress(a.clone()));
        }
    }
    let session = ledger.deploy_sap(addr_client, addr_client, addr_server)?;
    let randomness = commitment_randomness(rng);
    let g_client = commit(statement, &randomness).expect("fresh randomness has the right length");
    ledger.sap_post(addr_client, session, g_client.clone())?;
    Ok(SapInit { randomness, g_client, session })
}

/// Server side of the agreement. Posts the server's commitment and returns
/// `(Some(g_server), true)` only if the ledger attributes `g_client` to
/// `addr_client` and the received opening matches it.
pub fn sap_agree(
    ledger: &mut Ledger,
    statement: &[u8],
    randomness: &[u8],
    g_client: &Commitment,
    addr_client: &Address,
    session: SessionId,
) -> (Option<Commitment>, bool) {
    let Ok(state) = ledger.sap_session(session) else {
        return (None, false);
    };
    if state.addr_client != *addr_client || state.g_client.as_ref() != Some(g_client) {
        return (None, false);
    }
    let opening = Opening::new(statement.to_vec(), randomness.to_vec());
    if !commit_verify(g_client, &opening) {
        return (None, false);
    }
    let Ok(g_server) = commit(statement, randomness) else {
        return (None, false);
    };
    let addr_server = state.addr_server.clone();
    match ledger.sap_post(&addr_server, session, g_server.clone()) {
        Ok(()) => (Some(g_server), true),
        Err(_) => (None, false),
    }
}

/// Checks an opening against a session snapshot; usable off-chain.
pub fn sap_verify_snapshot(
    opening: &Opening,
    g_client: &Commitment,
    g_server: &Commitment,
    addr_client: &Address,
    addr_server: &Address,
    snapshot: &SapSessionState,
) -> bool {
    snapshot.addr_client == *addr_client
        && snapshot.addr_server == *addr_server
        && snapshot.g_client.as_ref() == Some(g_client)
        && snapshot.g_server.as_ref() == Some(g_server)
        && commit_verify(g_client, opening)
        && commit_verify(g_server, opening)
}

pub fn sap_verify(
    opening: &Opening,
    g_client: &Commitment,
    g_server: &Commitment,
    addr_client: &Address,
    addr_server: &Address,
    session: SessionId,
    ledger: &Ledger,
) -> bool {
    match ledger.sap_session(session) {
        Ok(s) => sap_verify_snapshot(opening, g_client, g_server, addr_client, addr_server, s),
        Err(_) => false,
    }
}

/// Verification using the commitments and addresses recorded in the
/// session itself, as a contract or arbiter does.
pub fn sap_verify_recorded(ledger: &Ledger, session: SessionId, opening: &Opening) -> bool {
    let Ok(s) = ledger.sap_session(session) else {
        return false;
    };
    match (&s.g_client, &s.g_server) {
        (Some(gc), Some(gs)) => sap_verify_snapshot(opening, gc, gs, &s.addr_client, &s.addr_server, s),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn ledger() -> (Ledger, Address, Address) {
        let mut l = Ledger::new();
        let c = Address::new("client");
        let s = Address::new("server");
        l.create_account(c.clone(), 10).unwrap();
        l.create_account(s.clone(), 10).unwrap();
        (l, c, s)
    }

    #[test]
    fn init_posts_client_commitment() {
        let (mut l, c, s) = ledger();
        let mut r = ChaCha20Rng::seed_from_u64(1);
        let init = sap_init(&mut l, &c, &s, b"qp", &mut r).unwrap();
        assert_eq!(init.randomness.len(), 16);
        let state = l.sap_session(init.session).unwrap();
        assert_eq!(state.g_client.as_ref(), Some(&init.g_client));
        assert!(state.g_server.is_none());
        let again = sap_init(&mut l, &c, &s, b"qp", &mut r).unwrap();
        assert_ne!(again.g_client, init.g_client);
    }

    #[test]
    fn init_unknown_address() {
        let (mut l, c, _) = ledger();
        let mut r = ChaCha20Rng::seed_from_u64(1);
        let ghost = Address::new("ghost");
        assert_eq!(
            sap_init(&mut l, &c, &ghost, b"x", &mut r).unwrap_err(),
            SapError::UnknownAddress(ghost)
        );
    }

    #[test]
    fn honest_agreement_and_verify() {
        let (mut l, c, s) = ledger();
        let mut r = ChaCha20Rng::seed_from_u64(2);
        let init = sap_init(&mut l, &c, &s, b"statement", &mut r).unwrap();
        let (gs, b) = sap_agree(&mut l, b"statement", &init.randomness, &init.g_client, &c, init.session);
        assert!(b);
        let gs = gs.unwrap();
        assert_eq!(gs, init.g_client);
        let o = Opening::new(b"statement".to_vec(), init.randomness.clone());
        assert!(sap_verify(&o, &init.g_client, &gs, &c, &s, init.session, &l));
        assert!(sap_verify_recorded(&l, init.session, &o));
        let other = Opening::new(b"statemenT".to_vec(), init.randomness);
        assert!(!sap_verify(&other, &init.g_client, &gs, &c, &s, init.session, &l));
        // Offline check over a snapshot gives the same answer.
        let snap = l.sap_session(init.session).unwrap().clone();
        assert!(sap_verify_snapshot(&o, &init.g_client, &gs, &c, &s, &snap));
    }

    #[test]
    fn tampered_statement_is_refused() {
        let (mut l, c, _) = ledger();
        let mut r = ChaCha20Rng::seed_from_u64(3);
        let init = sap_init(&mut l, &c, &Address::new("server"), b"real", &mut r).unwrap();
        let (gs, b) = sap_agree(&mut l, b"fake", &init.randomness, &init.g_client, &c, init.session);
        assert!(!b);
        assert!(gs.is_none());
        assert!(l.sap_session(init.session).unwrap().g_server.is_none());
    }

    #[test]
    fn commitment_from_wrong_address_is_refused() {
        let (mut l, c, s) = ledger();
        let mut r = ChaCha20Rng::seed_from_u64(4);
        let init = sap_init(&mut l, &c, &s, b"x", &mut r).unwrap();
        // The server is told the client commitment came from a different address.
        let (_, b) = sap_agree(&mut l, b"x", &init.randomness, &init.g_client, &s, init.session);
        assert!(!b);
    }

    #[test]
    fn verify_fails_without_server_commitment() {
        let (mut l, c, s) = ledger();
        let mut r = ChaCha20Rng::seed_from_u64(5);
        let init = sap_init(&mut l, &c, &s, b"x", &mut r).unwrap();
        let o = Opening::new(b"x".to_vec(), init.randomness);
        assert!(!sap_verify(&o, &init.g_client, &init.g_client, &c, &s, init.session, &l));
        assert!(!sap_verify_recorded(&l, init.session, &o));
    }

    #[test]
    fn binding_against_other_statements() {
        let (mut l, c, s) = ledger();
        let mut r = ChaCha20Rng::seed_from_u64(6);
        let init = sap_init(&mut l, &c, &s, b"agreed", &mut r).unwrap();
        sap_agree(&mut l, b"agreed", &init.randomness, &init.g_client, &c, init.session);
        for i in 0..2000u32 {
            let o = Opening::new(i.to_be_bytes().to_vec(), commitment_randomness(&mut r));
            assert!(!sap_verify_recorded(&l, init.session, &o));
        }
    }

    #[test]
    fn ledger_state_hides_statement() {
        let (mut l, c, s) = ledger();
        let mut r = ChaCha20Rng::seed_from_u64(7);
        let mut statement = vec![0u8; 48];
        r.fill_bytes(&mut statement);
        let init = sap_init(&mut l, &c, &s, &statement, &mut r).unwrap();
        sap_agree(&mut l, &statement, &init.randomness, &init.g_client, &c, init.session);
        let dump = serde_json::to_string(&l).unwrap();
        assert!(!dump.contains(&hex::encode(&statement)));
        let raw = serde_json::to_vec(&l).unwrap();
        assert!(!raw.windows(statement.len()).any(|w| w == statement.as_slice()));
    }

    #[test]
    fn verdict_is_frozen_once_both_commitments_exist() {
        let (mut l, c, s) = ledger();
        let mut r = ChaCha20Rng::seed_from_u64(8);
        let init = sap_init(&mut l, &c, &s, b"x", &mut r).unwrap();
        sap_agree(&mut l, b"x", &init.randomness, &init.g_client, &c, init.session);
        let o = Opening::new(b"x".to_vec(), init.randomness.clone());
        let junk = commit(b"y", &init.randomness).unwrap();
        assert!(l.sap_post(&c, init.session, junk.clone()).is_err());
        assert!(l.sap_post(&s, init.session, junk).is_err());
        assert!(sap_verify_recorded(&l, init.session, &o));
    }

    #[test]
    fn canonical_encoding_round_trip() {
        let bytes = StatementEncoder::new().u64_field(1, 7).field(2, b"abc").finish();
        assert_eq!(bytes, [1, 0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0, 7, 2, 0, 0, 0, 3, b'a', b'b', b'c']);
        let mut d = StatementDecoder::new(&bytes);
        assert_eq!(d.u64_field(1).unwrap(), 7);
        assert_eq!(d.field(2).unwrap(), b"abc");
        d.finish().unwrap();
        let mut d = StatementDecoder::new(&bytes);
        assert!(d.field(2).is_err());
        let mut d = StatementDecoder::new(&bytes[..bytes.len() - 1]);
        d.u64_field(1).unwrap();
        assert!(d.field(2).is_err());
    }
}
