//! Recurring contingent PoR payment protocol.
//!
//! Phases: key generation, client and server initiation (statement
//! agreement plus masked deposits), `z` billing cycles of encrypted queries
//! and encrypted, padded proofs, dispute resolution and coin transfer. Two
//! resolution variants exist: a third-party arbiter that charges `l` per
//! resolved complaint to whoever caused it, and a contract-run resolver
//! that keeps only `y_C`/`y_S` and folds compensation into the payouts.

mod client;
mod encoding;
mod payout;
mod resolve;
mod server;

pub use client::{
    client_init, client_init_with_params, client_query, client_verify, post_query_payload, ClientInit,
    ClientSession, Handoff, Parties, SessionConfig,
};
pub use encoding::{
    decode_entry, decode_proof_vector, dummy_proof_vector, encode_proof_vector, session_layout, ProofShape,
};
pub use payout::{
    arbiter_variant_distribution, arbiterless_variant_distribution, payout_arbiter_variant,
    payout_arbiterless_variant, refund, Distribution,
};
pub use resolve::{
    arbiter_resolve_client, arbiter_resolve_server, check_query, contract_finalize, contract_resolve, CounterKind,
    CounterUpdate, ServerPass,
};
pub use server::{
    server_check, server_commit, server_init, server_prove, server_prove_with, server_reject_query, ProveOutcome,
    ServerCheck, ServerSession,
};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{CryptoError, SymKey, SYM_KEY_LEN};
use crate::ledger::{Coin, LedgerError};
use crate::merkle::{self, Digest};
use crate::por::{PorError, PublicParams, Zeta};
use crate::sap::{DecodeError, SapError, StatementDecoder, StatementEncoder};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("price ({o}, {l}) is not in the price list")]
    PriceNotInList { o: Coin, l: Coin },
    #[error("balance {balance} is below the required deposit {required}")]
    InsufficientBalance { balance: Coin, required: Coin },
    #[error("no query posted for cycle {0}")]
    MissingQuery(u32),
    #[error("no proof posted for cycle {0}")]
    MissingProof(u32),
    #[error("statement opening rejected")]
    BadOpening,
    #[error("deposits incomplete; only the refund path applies")]
    RefundPath,
    #[error("refund path not available: both parties committed")]
    NotRefundable,
    #[error("counters exceed the cycle count or drive a payout negative")]
    CounterOutOfBounds,
    #[error(transparent)]
    Statement(#[from] DecodeError),
    #[error(transparent)]
    Por(#[from] PorError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Sap(#[from] SapError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Arbiter,
    Arbiterless,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arbiter" => Ok(Variant::Arbiter),
            "arbiterless" => Ok(Variant::Arbiterless),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Price {
    pub o: Coin,
    pub l: Coin,
}

/// Public price list; deposits are masked by its maxima.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceList(pub Vec<Price>);

impl PriceList {
    pub fn o_max(&self) -> Coin {
        self.0.iter().map(|p| p.o).max().unwrap_or(0)
    }

    pub fn l_max(&self) -> Coin {
        self.0.iter().map(|p| p.l).max().unwrap_or(0)
    }

    pub fn contains(&self, p: Price) -> bool {
        self.0.contains(&p)
    }

    /// Client deposit `z·(o_max + l_max)` and required server deposit
    /// `z·l_max`.
    pub fn masked_deposits(&self, z: u32) -> (Coin, Coin) {
        let z = z as Coin;
        (z * (self.o_max() + self.l_max()), z * self.l_max())
    }
}

/// Query/proof secret parameters `qp`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QpStatement {
    pub pad_pi: u32,
    pub k_bar: SymKey,
    pub pp: PublicParams,
}

impl QpStatement {
    pub fn encode(&self) -> Vec<u8> {
        StatementEncoder::new()
            .u64_field(1, self.pad_pi as u64)
            .field(2, &self.k_bar.0)
            .field(3, self.pp.sigma.as_bytes())
            .u64_field(4, self.pp.phi as u64)
            .u64_field(5, self.pp.m as u64)
            .u64_field(6, self.pp.zeta.psi as u64)
            .u64_field(7, self.pp.zeta.eta as u64)
            .u64_field(8, self.pp.zeta.iota as u64)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = StatementDecoder::new(bytes);
        let narrow = |v: u64, what: &str| u32::try_from(v).map_err(|_| DecodeError(format!("{what} out of range")));
        let pad_pi = narrow(d.u64_field(1)?, "pad_pi")?;
        let k_bar: [u8; SYM_KEY_LEN] = d
            .field(2)?
            .try_into()
            .map_err(|_| DecodeError("symmetric key length".into()))?;
        let sigma = d.field(3)?.to_vec();
        if sigma.is_empty() || sigma.len() > 32 {
            return Err(DecodeError("root length".into()));
        }
        let phi = narrow(d.u64_field(4)?, "phi")?;
        let m = narrow(d.u64_field(5)?, "m")?;
        let zeta = Zeta {
            psi: narrow(d.u64_field(6)?, "psi")?,
            eta: narrow(d.u64_field(7)?, "eta")?,
            iota: narrow(d.u64_field(8)?, "iota")?,
        };
        d.finish()?;
        if m == 0 {
            return Err(DecodeError("m must be positive".into()));
        }
        Ok(QpStatement {
            pad_pi,
            k_bar: SymKey(k_bar),
            pp: PublicParams { sigma: Digest(sigma), phi, m, zeta },
        })
    }
}

/// Coin secret parameters `cp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpStatement {
    pub o: Coin,
    pub o_max: Coin,
    pub l: Coin,
    pub l_max: Coin,
    pub z: u32,
}

impl CpStatement {
    pub fn encode(&self) -> Vec<u8> {
        StatementEncoder::new()
            .u64_field(1, self.o)
            .u64_field(2, self.o_max)
            .u64_field(3, self.l)
            .u64_field(4, self.l_max)
            .u64_field(5, self.z as u64)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = StatementDecoder::new(bytes);
        let cp = CpStatement {
            o: d.u64_field(1)?,
            o_max: d.u64_field(2)?,
            l: d.u64_field(3)?,
            l_max: d.u64_field(4)?,
            z: u32::try_from(d.u64_field(5)?).map_err(|_| DecodeError("z out of range".into()))?,
        };
        d.finish()?;
        if cp.o > cp.o_max || cp.l > cp.l_max {
            return Err(DecodeError("price above its maximum".into()));
        }
        Ok(cp)
    }
}

/// Complaint `m_{S,j}`: the server rejects the query of cycle `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ServerComplaint {
    pub j: u32,
}

/// Complaint `m_{C,j} = [j, g]`: entry `g` of cycle `j`'s proof was rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClientComplaint {
    pub j: u32,
    pub g: u32,
}

/// Real units per proof entry: block, sibling block, one digest per level
/// above the first, and the leaf index.
pub fn entry_real_units(m: u32) -> u32 {
    merkle::height_for(m as usize) as u32 + 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyGen {
    pub k_bar: SymKey,
    pub pad_pi: u32,
    pub pi_act: u32,
}

/// Fresh symmetric key and per-entry pad count `pad_pi = pi_max - pi_act`,
/// where sizes count cipher units per proof entry. `pi_max = None` means no
/// padding.
pub fn key_gen(rng: &mut impl RngCore, m: u32, pi_max: Option<u32>) -> Result<KeyGen, ProtocolError> {
    let pi_act = entry_real_units(m);
    let pi_max = pi_max.unwrap_or(pi_act);
    if pi_max < pi_act {
        return Err(ProtocolError::Config(format!(
            "pi_max {pi_max} is below the actual proof size {pi_act}"
        )));
    }
    Ok(KeyGen { k_bar: SymKey::random(rng), pad_pi: pi_max - pi_act, pi_act })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn pp() -> PublicParams {
        PublicParams { sigma: Digest(vec![7; 16]), phi: 16, m: 256, zeta: Zeta::default() }
    }

    #[test]
    fn key_gen_padding() {
        let mut r = ChaCha20Rng::seed_from_u64(1);
        let k = key_gen(&mut r, 256, None).unwrap();
        assert_eq!(k.pi_act, 10);
        assert_eq!(k.pad_pi, 0);
        assert_eq!(k.k_bar.0.len(), 16);
        assert_eq!(key_gen(&mut r, 256, Some(13)).unwrap().pad_pi, 3);
        assert!(matches!(key_gen(&mut r, 256, Some(9)), Err(ProtocolError::Config(_))));
    }

    #[test]
    fn masked_deposits() {
        let pl = PriceList(vec![Price { o: 5, l: 2 }, Price { o: 3, l: 1 }]);
        assert_eq!(pl.masked_deposits(3), (21, 6));
        assert_eq!(pl.masked_deposits(1), (7, 2));
        assert!(pl.contains(Price { o: 3, l: 1 }));
        assert!(!pl.contains(Price { o: 3, l: 2 }));
    }

    #[test]
    fn statements_round_trip() {
        let qp = QpStatement { pad_pi: 2, k_bar: SymKey([9; 16]), pp: pp() };
        assert_eq!(QpStatement::decode(&qp.encode()).unwrap(), qp);
        let cp = CpStatement { o: 5, o_max: 5, l: 2, l_max: 3, z: 4 };
        assert_eq!(CpStatement::decode(&cp.encode()).unwrap(), cp);
        let bad = CpStatement { o: 6, ..cp };
        assert!(CpStatement::decode(&bad.encode()).is_err());
        let mut bytes = qp.encode();
        bytes.push(0);
        assert!(QpStatement::decode(&bytes).is_err());
    }

    #[test]
    fn variant_parse() {
        assert_eq!("arbiter".parse::<Variant>().unwrap(), Variant::Arbiter);
        assert_eq!("arbiterless".parse::<Variant>().unwrap(), Variant::Arbiterless);
        assert!("judge".parse::<Variant>().is_err());
    }
}
