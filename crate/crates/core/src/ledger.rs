//! Deterministic in-process contract environment.
//!
//! A single serialized state machine holding account balances, statement
//! agreement sessions and payment contracts. Time is a logical ordinal that
//! only moves forward; every contract carries a schedule of named time
//! points and accepts each message kind only from one party at one point.
//! Sender attribution stands in for transaction signatures: every mutating
//! call names the sender address and the ledger records it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_concat, CipherUnit, Commitment, Opening, DEFAULT_HASH_LEN};
use crate::protocol::{ClientComplaint, ServerComplaint};

pub type Coin = u64;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub String);

impl Address {
    pub fn new(s: impl Into<String>) -> Self {
        Address(s.into())
    }
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContractId(pub usize);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown address {0}")]
    UnknownAddress(Address),
    #[error("address {0} already exists")]
    DuplicateAddress(Address),
    #[error("unknown contract {0:?}")]
    UnknownContract(ContractId),
    #[error("unknown agreement session {0:?}")]
    UnknownSession(SessionId),
    #[error("{address} holds {balance}, cannot move {amount}")]
    InsufficientBalance { address: Address, balance: Coin, amount: Coin },
    #[error("{kind} not accepted at ordinal {now}")]
    OutOfWindow { kind: &'static str, now: u64 },
    #[error("{sender} may not send {kind}")]
    WrongSender { sender: Address, kind: &'static str },
    #[error("slot already filled for {kind}")]
    DuplicateSlot { kind: &'static str },
    #[error("time must move forward: now {now}, requested {to}")]
    NonMonotonicTime { now: u64, to: u64 },
    #[error("distribution sums to {distributed}, escrow holds {escrow}")]
    Unbalanced { distributed: Coin, escrow: Coin },
    #[error("contract already paid out")]
    AlreadyPaid,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Named protocol time points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimeLabel {
    T0,
    T1,
    T2,
    /// `G(j, 1)` query point and `G(j, 2)` proof point of cycle `j`.
    G(u32, u8),
    /// Dispute delay separating the last cycle from `K1`.
    J,
    K(u8),
    L,
}

impl std::fmt::Display for TimeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TimeLabel::G(j, s) => write!(f, "G({j},{s})"),
            TimeLabel::K(i) => write!(f, "K{i}"),
            other => write!(f, "{other:?}"),
        }
    }
}

/// Canonical label order for a session with `z` cycles.
pub fn canonical_labels(z: u32) -> Vec<TimeLabel> {
    let mut v = vec![TimeLabel::T0, TimeLabel::T1, TimeLabel::T2];
    for j in 1..=z {
        v.push(TimeLabel::G(j, 1));
        v.push(TimeLabel::G(j, 2));
    }
    v.push(TimeLabel::J);
    v.extend((1..=6).map(TimeLabel::K));
    v.push(TimeLabel::L);
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimePoint {
    pub label: TimeLabel,
    pub ordinal: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub z: u32,
    points: Vec<TimePoint>,
}

impl Schedule {
    /// Validates that every label of a `z`-cycle session is present exactly
    /// once and that ordinals strictly increase in canonical order.
    pub fn new(z: u32, points: Vec<TimePoint>) -> Result<Self, LedgerError> {
        if z == 0 {
            return Err(LedgerError::InvalidSchedule("z must be positive".into()));
        }
        let labels = canonical_labels(z);
        if points.len() != labels.len() {
            return Err(LedgerError::InvalidSchedule(format!(
                "expected {} time points, got {}",
                labels.len(),
                points.len()
            )));
        }
        let mut by_label: BTreeMap<TimeLabel, u64> = BTreeMap::new();
        for p in &points {
            if by_label.insert(p.label, p.ordinal).is_some() {
                return Err(LedgerError::InvalidSchedule(format!("duplicate {}", p.label)));
            }
        }
        let mut ordered = Vec::with_capacity(labels.len());
        let mut prev: Option<TimePoint> = None;
        for label in labels {
            let ordinal = *by_label
                .get(&label)
                .ok_or_else(|| LedgerError::InvalidSchedule(format!("missing {label}")))?;
            let tp = TimePoint { label, ordinal };
            if let Some(p) = prev {
                if ordinal <= p.ordinal {
                    return Err(LedgerError::InvalidSchedule(format!(
                        "{} must come after {}",
                        label, p.label
                    )));
                }
            }
            ordered.push(tp);
            prev = Some(tp);
        }
        Ok(Schedule { z, points: ordered })
    }

    /// Consecutive ordinals starting at `start`.
    pub fn sequential(z: u32, start: u64) -> Result<Self, LedgerError> {
        let points = canonical_labels(z)
            .into_iter()
            .zip(start..)
            .map(|(label, ordinal)| TimePoint { label, ordinal })
            .collect();
        Schedule::new(z, points)
    }

    pub fn at(&self, label: TimeLabel) -> Option<TimePoint> {
        self.points.iter().copied().find(|p| p.label == label)
    }

    pub fn label_of(&self, ordinal: u64) -> Option<TimeLabel> {
        self.points.iter().find(|p| p.ordinal == ordinal).map(|p| p.label)
    }

    pub fn points(&self) -> &[TimePoint] {
        &self.points
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub y_c: u64,
    pub y_c_prime: u64,
    pub y_s: u64,
    pub y_s_prime: u64,
}

impl Counters {
    pub fn total(&self) -> u64 {
        self.y_c + self.y_c_prime + self.y_s + self.y_s_prime
    }

    pub fn add(&mut self, other: &Counters) {
        self.y_c += other.y_c;
        self.y_c_prime += other.y_c_prime;
        self.y_s += other.y_s;
        self.y_s_prime += other.y_s_prime;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SapSessionState {
    pub addr_client: Address,
    pub addr_server: Address,
    pub g_client: Option<Commitment>,
    pub g_server: Option<Commitment>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractParams {
    pub client: Address,
    pub server: Address,
    /// Present in the third-party-arbiter variant only.
    pub arbiter: Option<Address>,
    pub z: u32,
    pub coin_star_client: Coin,
    pub p_server: Coin,
    pub sap_qp: SessionId,
    pub sap_cp: SessionId,
    pub schedule: Schedule,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostedComplaints<T> {
    pub complaints: Vec<T>,
    pub opening: Opening,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractState {
    pub address: Address,
    pub params: ContractParams,
    pub deposited_client: Coin,
    pub deposited_server: Coin,
    pub escrow: Coin,
    pub a_flag: Option<bool>,
    pub counters: Counters,
    pub counters_recorded: bool,
    pub posted_queries: BTreeMap<u32, CipherUnit>,
    pub posted_proofs: BTreeMap<u32, Vec<CipherUnit>>,
    pub server_complaints: Option<PostedComplaints<ServerComplaint>>,
    pub client_complaints: Option<PostedComplaints<ClientComplaint>>,
    pub paid_out: bool,
}

/// Contract messages other than deposits and payouts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    Accept { a: bool },
    Query { j: u32, unit: CipherUnit },
    Proof { j: u32, units: Vec<CipherUnit> },
    ServerComplaints(PostedComplaints<ServerComplaint>),
    ClientComplaints(PostedComplaints<ClientComplaint>),
    Counters(Counters),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Accept { .. } => "accept",
            Message::Query { .. } => "query",
            Message::Proof { .. } => "proof",
            Message::ServerComplaints(_) => "server-complaints",
            Message::ClientComplaints(_) => "client-complaints",
            Message::Counters(_) => "counters",
        }
    }

    /// Wire bytes: raw units for queries and proofs, JSON otherwise.
    pub fn payload_bytes(&self) -> Vec<u8> {
        match self {
            Message::Query { unit, .. } => unit.as_bytes().to_vec(),
            Message::Proof { units, .. } => units.iter().flat_map(|u| u.as_bytes().iter().copied()).collect(),
            other => serde_json::to_vec(other).expect("message serializes"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub seq: u64,
    pub time: u64,
    pub label: Option<String>,
    pub sender: Address,
    pub kind: String,
    pub payload_digest: String,
    pub payload_len: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genesis {
    pub accounts: Vec<GenesisAccount>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisAccount {
    pub address: Address,
    pub balance: Coin,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    now: u64,
    accounts: BTreeMap<Address, Coin>,
    saps: Vec<SapSessionState>,
    contracts: Vec<ContractState>,
    trace: Vec<TraceEntry>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_genesis(genesis: &Genesis) -> Result<Self, LedgerError> {
        let mut l = Ledger::new();
        for acct in &genesis.accounts {
            l.create_account(acct.address.clone(), acct.balance)?;
        }
        Ok(l)
    }

    pub fn create_account(&mut self, address: Address, balance: Coin) -> Result<(), LedgerError> {
        if self.accounts.contains_key(&address) || self.is_contract_address(&address) {
            return Err(LedgerError::DuplicateAddress(address));
        }
        self.accounts.insert(address, balance);
        Ok(())
    }

    fn is_contract_address(&self, a: &Address) -> bool {
        self.contracts.iter().any(|c| &c.address == a)
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn balance(&self, a: &Address) -> Option<Coin> {
        self.accounts.get(a).copied()
    }

    pub fn accounts(&self) -> &BTreeMap<Address, Coin> {
        &self.accounts
    }

    /// Sum of all balances and all contract escrows.
    pub fn total_supply(&self) -> u128 {
        self.accounts.values().map(|&b| b as u128).sum::<u128>()
            + self.contracts.iter().map(|c| c.escrow as u128).sum::<u128>()
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// One JSON object per line, in application order.
    pub fn export_trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|e| serde_json::to_string(e).expect("trace entry serializes") + "\n")
            .collect()
    }

    fn require_account(&self, a: &Address) -> Result<(), LedgerError> {
        if self.accounts.contains_key(a) {
            Ok(())
        } else {
            Err(LedgerError::UnknownAddress(a.clone()))
        }
    }

    fn record(&mut self, sender: &Address, kind: &str, payload: &[u8], label: Option<TimeLabel>) {
        let seq = self.trace.len() as u64;
        self.trace.push(TraceEntry {
            seq,
            time: self.now,
            label: label.map(|l| l.to_string()),
            sender: sender.clone(),
            kind: kind.to_string(),
            payload_digest: hex::encode(hash_concat(&[payload], DEFAULT_HASH_LEN)),
            payload_len: payload.len(),
        });
    }

    pub fn advance_time(&mut self, to: u64) -> Result<(), LedgerError> {
        if to <= self.now {
            return Err(LedgerError::NonMonotonicTime { now: self.now, to });
        }
        self.now = to;
        Ok(())
    }

    /// Moves the clock to `label` of `contract`'s schedule.
    pub fn advance_to(&mut self, contract: ContractId, label: TimeLabel) -> Result<(), LedgerError> {
        let tp = self
            .contract(contract)?
            .params
            .schedule
            .at(label)
            .ok_or_else(|| LedgerError::InvalidSchedule(format!("no {label} in schedule")))?;
        self.advance_time(tp.ordinal)
    }

    // ---- statement agreement sessions ----

    pub fn deploy_sap(
        &mut self,
        sender: &Address,
        addr_client: &Address,
        addr_server: &Address,
    ) -> Result<SessionId, LedgerError> {
        self.require_account(sender)?;
        self.require_account(addr_client)?;
        self.require_account(addr_server)?;
        let id = SessionId(self.saps.len());
        self.saps.push(SapSessionState {
            addr_client: addr_client.clone(),
            addr_server: addr_server.clone(),
            g_client: None,
            g_server: None,
        });
        let payload = format!("{}|{}", addr_client, addr_server);
        self.record(sender, "sap-deploy", payload.as_bytes(), None);
        Ok(id)
    }

    /// Records a commitment under the sender's role. The client slot is
    /// filled first; the server slot only after it.
    pub fn sap_post(&mut self, sender: &Address, session: SessionId, c: Commitment) -> Result<(), LedgerError> {
        let s = self.saps.get_mut(session.0).ok_or(LedgerError::UnknownSession(session))?;
        if *sender == s.addr_client {
            if s.g_client.is_some() {
                return Err(LedgerError::DuplicateSlot { kind: "sap-commit" });
            }
            s.g_client = Some(c.clone());
        } else if *sender == s.addr_server {
            if s.g_client.is_none() {
                return Err(LedgerError::OutOfWindow { kind: "sap-commit", now: self.now });
            }
            if s.g_server.is_some() {
                return Err(LedgerError::DuplicateSlot { kind: "sap-commit" });
            }
            s.g_server = Some(c.clone());
        } else {
            return Err(LedgerError::WrongSender { sender: sender.clone(), kind: "sap-commit" });
        }
        self.record(sender, "sap-commit", &c.0, None);
        Ok(())
    }

    pub fn sap_session(&self, session: SessionId) -> Result<&SapSessionState, LedgerError> {
        self.saps.get(session.0).ok_or(LedgerError::UnknownSession(session))
    }

    // ---- payment contracts ----

    pub fn deploy(&mut self, deployer: &Address, params: ContractParams) -> Result<ContractId, LedgerError> {
        self.require_account(deployer)?;
        self.require_account(&params.client)?;
        self.require_account(&params.server)?;
        if let Some(r) = &params.arbiter {
            self.require_account(r)?;
        }
        self.sap_session(params.sap_qp)?;
        self.sap_session(params.sap_cp)?;
        if params.schedule.z != params.z {
            return Err(LedgerError::InvalidSchedule("schedule z differs from contract z".into()));
        }
        let t0 = params.schedule.at(TimeLabel::T0).expect("validated schedule").ordinal;
        if t0 < self.now {
            return Err(LedgerError::InvalidSchedule("schedule starts in the past".into()));
        }
        let id = ContractId(self.contracts.len());
        let address = Address(format!("sc-{}", id.0));
        let payload = serde_json::to_vec(&params).expect("params serialize");
        self.contracts.push(ContractState {
            address,
            params,
            deposited_client: 0,
            deposited_server: 0,
            escrow: 0,
            a_flag: None,
            counters: Counters::default(),
            counters_recorded: false,
            posted_queries: BTreeMap::new(),
            posted_proofs: BTreeMap::new(),
            server_complaints: None,
            client_complaints: None,
            paid_out: false,
        });
        self.record(deployer, "deploy", &payload, None);
        Ok(id)
    }

    pub fn contract(&self, id: ContractId) -> Result<&ContractState, LedgerError> {
        self.contracts.get(id.0).ok_or(LedgerError::UnknownContract(id))
    }

    fn contract_mut(&mut self, id: ContractId) -> Result<&mut ContractState, LedgerError> {
        self.contracts.get_mut(id.0).ok_or(LedgerError::UnknownContract(id))
    }

    fn current_label(&self, id: ContractId) -> Result<Option<TimeLabel>, LedgerError> {
        Ok(self.contract(id)?.params.schedule.label_of(self.now))
    }

    fn require_label(&self, id: ContractId, kind: &'static str, want: TimeLabel) -> Result<(), LedgerError> {
        if self.current_label(id)? == Some(want) {
            Ok(())
        } else {
            Err(LedgerError::OutOfWindow { kind, now: self.now })
        }
    }

    /// Client deposits at `T0`, server at `T1`.
    pub fn deposit(&mut self, sender: &Address, id: ContractId, amount: Coin) -> Result<(), LedgerError> {
        let c = self.contract(id)?;
        let is_client = *sender == c.params.client;
        let is_server = *sender == c.params.server;
        if !is_client && !is_server {
            return Err(LedgerError::WrongSender { sender: sender.clone(), kind: "deposit" });
        }
        let window = if is_client { TimeLabel::T0 } else { TimeLabel::T1 };
        self.require_label(id, "deposit", window)?;
        let balance = self.balance(sender).ok_or_else(|| LedgerError::UnknownAddress(sender.clone()))?;
        if balance < amount {
            return Err(LedgerError::InsufficientBalance { address: sender.clone(), balance, amount });
        }
        *self.accounts.get_mut(sender).expect("checked") -= amount;
        let c = self.contract_mut(id)?;
        c.escrow += amount;
        if is_client {
            c.deposited_client += amount;
        } else {
            c.deposited_server += amount;
        }
        self.record(sender, "deposit", &amount.to_be_bytes(), Some(window));
        Ok(())
    }

    /// Accepts `message` iff its sender, kind and the current time match the
    /// contract schedule. Accepted payloads are never overwritten.
    pub fn post(&mut self, sender: &Address, id: ContractId, message: Message) -> Result<(), LedgerError> {
        let kind = message.kind();
        let c = self.contract(id)?;
        let p = &c.params;
        let (expected_sender, window) = match &message {
            Message::Accept { .. } => (p.server.clone(), TimeLabel::T1),
            Message::Query { j, .. } => (p.client.clone(), TimeLabel::G(*j, 1)),
            Message::Proof { j, .. } => (p.server.clone(), TimeLabel::G(*j, 2)),
            Message::ServerComplaints(_) => (p.server.clone(), TimeLabel::K(1)),
            Message::ClientComplaints(_) => (p.client.clone(), TimeLabel::K(4)),
            Message::Counters(_) => (p.arbiter.clone().unwrap_or_else(|| c.address.clone()), TimeLabel::K(6)),
        };
        if *sender != expected_sender {
            return Err(LedgerError::WrongSender { sender: sender.clone(), kind });
        }
        self.require_label(id, kind, window)?;
        let duplicate = match &message {
            Message::Accept { .. } => c.a_flag.is_some(),
            Message::Query { j, .. } => c.posted_queries.contains_key(j),
            Message::Proof { j, .. } => c.posted_proofs.contains_key(j),
            Message::ServerComplaints(_) => c.server_complaints.is_some(),
            Message::ClientComplaints(_) => c.client_complaints.is_some(),
            Message::Counters(_) => c.counters_recorded,
        };
        if duplicate {
            return Err(LedgerError::DuplicateSlot { kind });
        }
        let payload = message.payload_bytes();
        let c = self.contract_mut(id)?;
        match message {
            Message::Accept { a } => c.a_flag = Some(a),
            Message::Query { j, unit } => {
                c.posted_queries.insert(j, unit);
            }
            Message::Proof { j, units } => {
                c.posted_proofs.insert(j, units);
            }
            Message::ServerComplaints(m) => c.server_complaints = Some(m),
            Message::ClientComplaints(m) => c.client_complaints = Some(m),
            Message::Counters(y) => {
                c.counters.add(&y);
                c.counters_recorded = true;
            }
        }
        self.record(sender, kind, &payload, Some(window));
        Ok(())
    }

    /// Pays out the whole escrow. Allowed for either party at `T2` (refund
    /// path) or at `L`.
    pub fn execute_payout(
        &mut self,
        sender: &Address,
        id: ContractId,
        distribution: &[(Address, Coin)],
    ) -> Result<(), LedgerError> {
        let c = self.contract(id)?;
        if *sender != c.params.client && *sender != c.params.server {
            return Err(LedgerError::WrongSender { sender: sender.clone(), kind: "pay" });
        }
        let label = self.current_label(id)?;
        if !matches!(label, Some(TimeLabel::T2) | Some(TimeLabel::L)) {
            return Err(LedgerError::OutOfWindow { kind: "pay", now: self.now });
        }
        if c.paid_out {
            return Err(LedgerError::AlreadyPaid);
        }
        let distributed = distribution.iter().map(|(_, v)| *v as u128).sum::<u128>();
        if distributed != c.escrow as u128 {
            return Err(LedgerError::Unbalanced {
                distributed: distributed.min(u64::MAX as u128) as Coin,
                escrow: c.escrow,
            });
        }
        for (a, _) in distribution {
            self.require_account(a)?;
        }
        for (a, v) in distribution {
            *self.accounts.get_mut(a).expect("checked") += v;
        }
        let c = self.contract_mut(id)?;
        c.escrow = 0;
        c.paid_out = true;
        let payload = serde_json::to_vec(distribution).expect("distribution serializes");
        self.record(sender, "pay", &payload, label);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{commit, UnitLayout, SymKey};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn addr(s: &str) -> Address {
        Address::new(s)
    }

    fn setup(z: u32) -> (Ledger, ContractId) {
        let mut l = Ledger::new();
        l.create_account(addr("client"), 100).unwrap();
        l.create_account(addr("server"), 100).unwrap();
        l.create_account(addr("arbiter"), 0).unwrap();
        let s1 = l.deploy_sap(&addr("client"), &addr("client"), &addr("server")).unwrap();
        let s2 = l.deploy_sap(&addr("client"), &addr("client"), &addr("server")).unwrap();
        let params = ContractParams {
            client: addr("client"),
            server: addr("server"),
            arbiter: Some(addr("arbiter")),
            z,
            coin_star_client: 21,
            p_server: 6,
            sap_qp: s1,
            sap_cp: s2,
            schedule: Schedule::sequential(z, 1).unwrap(),
        };
        let id = l.deploy(&addr("client"), params).unwrap();
        (l, id)
    }

    fn unit(seed: u64) -> CipherUnit {
        UnitLayout::new(16).sample_unit(&mut ChaCha20Rng::seed_from_u64(seed))
    }

    #[test]
    fn deploy_initializes_state() {
        let (l, id) = setup(3);
        let c = l.contract(id).unwrap();
        assert_eq!(c.counters, Counters::default());
        assert_eq!(c.escrow, 0);
        assert!(!c.paid_out);
    }

    #[test]
    fn bad_schedules_rejected() {
        let mut pts = Schedule::sequential(2, 1).unwrap().points().to_vec();
        pts.swap(0, 1);
        let ords: Vec<_> = pts.iter().map(|p| p.ordinal).collect();
        // Same labels, T1 now before T0.
        let shuffled: Vec<TimePoint> = canonical_labels(2)
            .into_iter()
            .zip(ords)
            .map(|(label, ordinal)| TimePoint { label, ordinal })
            .collect();
        assert!(matches!(Schedule::new(2, shuffled), Err(LedgerError::InvalidSchedule(_))));
        let mut missing = Schedule::sequential(2, 1).unwrap().points().to_vec();
        missing.pop();
        assert!(Schedule::new(2, missing).is_err());
        // K1 not after G(z,2) + J.
        let mut pts = Schedule::sequential(1, 1).unwrap().points().to_vec();
        let k1 = pts.iter().position(|p| p.label == TimeLabel::K(1)).unwrap();
        let g12 = pts.iter().position(|p| p.label == TimeLabel::G(1, 2)).unwrap();
        pts[k1].ordinal = pts[g12].ordinal;
        assert!(Schedule::new(1, pts).is_err());
    }

    #[test]
    fn two_deployments_are_independent() {
        let (mut l, a) = setup(1);
        let params = l.contract(a).unwrap().params.clone();
        let b = l.deploy(&addr("client"), params).unwrap();
        assert_ne!(a, b);
        l.advance_to(a, TimeLabel::T0).unwrap();
        l.deposit(&addr("client"), a, 21).unwrap();
        assert_eq!(l.contract(a).unwrap().escrow, 21);
        assert_eq!(l.contract(b).unwrap().escrow, 0);
    }

    #[test]
    fn deposits() {
        let (mut l, id) = setup(3);
        l.advance_to(id, TimeLabel::T0).unwrap();
        l.deposit(&addr("client"), id, 21).unwrap();
        assert_eq!(l.balance(&addr("client")), Some(79));
        assert_eq!(l.contract(id).unwrap().escrow, 21);
        let before = l.clone();
        assert!(matches!(
            l.deposit(&addr("client"), id, 80),
            Err(LedgerError::InsufficientBalance { .. })
        ));
        assert_eq!(l, before);
        // Server deposits only at T1.
        assert!(matches!(l.deposit(&addr("server"), id, 6), Err(LedgerError::OutOfWindow { .. })));
        l.advance_to(id, TimeLabel::T1).unwrap();
        l.deposit(&addr("server"), id, 5).unwrap();
        assert_eq!(l.contract(id).unwrap().deposited_server, 5);
        assert!(matches!(l.deposit(&addr("arbiter"), id, 0), Err(LedgerError::WrongSender { .. })));
    }

    #[test]
    fn posting_windows_and_slots() {
        let (mut l, id) = setup(3);
        l.advance_to(id, TimeLabel::G(2, 1)).unwrap();
        l.post(&addr("client"), id, Message::Query { j: 2, unit: unit(1) }).unwrap();
        assert_eq!(l.contract(id).unwrap().posted_queries[&2], unit(1));
        assert!(matches!(
            l.post(&addr("server"), id, Message::Proof { j: 2, units: vec![unit(2)] }),
            Err(LedgerError::OutOfWindow { .. })
        ));
        assert!(matches!(
            l.post(&addr("server"), id, Message::Query { j: 2, unit: unit(2) }),
            Err(LedgerError::WrongSender { .. })
        ));
        assert!(matches!(
            l.post(&addr("client"), id, Message::Query { j: 2, unit: unit(3) }),
            Err(LedgerError::DuplicateSlot { .. })
        ));
        l.advance_to(id, TimeLabel::G(2, 2)).unwrap();
        l.post(&addr("server"), id, Message::Proof { j: 2, units: vec![unit(2)] }).unwrap();
        assert!(matches!(
            l.post(&addr("server"), id, Message::Proof { j: 2, units: vec![unit(4)] }),
            Err(LedgerError::DuplicateSlot { .. })
        ));
        // Immutability.
        assert_eq!(l.contract(id).unwrap().posted_proofs[&2], vec![unit(2)]);
        assert_eq!(l.contract(id).unwrap().posted_queries[&2], unit(1));
    }

    #[test]
    fn skipped_windows_leave_empty_slots() {
        let (mut l, id) = setup(3);
        l.advance_to(id, TimeLabel::G(3, 1)).unwrap();
        assert!(matches!(
            l.post(&addr("client"), id, Message::Query { j: 1, unit: unit(1) }),
            Err(LedgerError::OutOfWindow { .. })
        ));
        assert!(l.contract(id).unwrap().posted_queries.is_empty());
    }

    #[test]
    fn clock_is_monotonic() {
        let (mut l, id) = setup(1);
        l.advance_to(id, TimeLabel::T0).unwrap();
        l.advance_to(id, TimeLabel::T1).unwrap();
        l.advance_to(id, TimeLabel::T2).unwrap();
        assert!(matches!(l.advance_to(id, TimeLabel::T1), Err(LedgerError::NonMonotonicTime { .. })));
    }

    #[test]
    fn payout_rules() {
        let (mut l, id) = setup(1);
        l.advance_to(id, TimeLabel::T0).unwrap();
        l.deposit(&addr("client"), id, 21).unwrap();
        l.advance_to(id, TimeLabel::T1).unwrap();
        l.deposit(&addr("server"), id, 6).unwrap();
        assert!(matches!(
            l.execute_payout(&addr("client"), id, &[(addr("client"), 27)]),
            Err(LedgerError::OutOfWindow { .. })
        ));
        l.advance_to(id, TimeLabel::L).unwrap();
        let short = [(addr("client"), 20), (addr("server"), 6)];
        assert!(matches!(
            l.execute_payout(&addr("client"), id, &short),
            Err(LedgerError::Unbalanced { distributed: 26, escrow: 27 })
        ));
        let dist = [(addr("client"), 6), (addr("server"), 21)];
        l.execute_payout(&addr("server"), id, &dist).unwrap();
        assert_eq!(l.contract(id).unwrap().escrow, 0);
        assert_eq!(l.balance(&addr("server")), Some(94 + 21));
        assert_eq!(l.execute_payout(&addr("server"), id, &dist), Err(LedgerError::AlreadyPaid));
        assert_eq!(l.total_supply(), 200);
    }

    #[test]
    fn sap_slots_follow_roles() {
        let mut l = Ledger::new();
        l.create_account(addr("c"), 0).unwrap();
        l.create_account(addr("s"), 0).unwrap();
        l.create_account(addr("x"), 0).unwrap();
        let s = l.deploy_sap(&addr("c"), &addr("c"), &addr("s")).unwrap();
        let key = SymKey([1; 16]);
        let c = commit(&key.0, &[0; 16]).unwrap();
        assert!(l.sap_post(&addr("s"), s, c.clone()).is_err());
        assert!(matches!(l.sap_post(&addr("x"), s, c.clone()), Err(LedgerError::WrongSender { .. })));
        l.sap_post(&addr("c"), s, c.clone()).unwrap();
        l.sap_post(&addr("s"), s, c.clone()).unwrap();
        assert!(matches!(l.sap_post(&addr("s"), s, c), Err(LedgerError::DuplicateSlot { .. })));
    }

    #[test]
    fn trace_export_is_jsonl() {
        let (mut l, id) = setup(1);
        l.advance_to(id, TimeLabel::T0).unwrap();
        l.deposit(&addr("client"), id, 21).unwrap();
        let out = l.export_trace_jsonl();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), l.trace().len());
        let last: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
        assert_eq!(last["kind"], "deposit");
        assert_eq!(last["label"], "T0");
    }

    #[test]
    fn genesis_round_trip() {
        let g: Genesis = serde_json::from_str(
            r#"{"accounts":[{"address":"client","balance":5},{"address":"server","balance":7}]}"#,
        )
        .unwrap();
        let l = Ledger::from_genesis(&g).unwrap();
        assert_eq!(l.total_supply(), 12);
        let dup = Genesis { accounts: vec![g.accounts[0].clone(), g.accounts[0].clone()] };
        assert!(Ledger::from_genesis(&dup).is_err());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Advance(u8),
        Deposit(bool, u8),
        Query(u32, u64),
        Proof(u32, u64),
        Pay(u8),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u8..4).prop_map(Op::Advance),
            (any::<bool>(), any::<u8>()).prop_map(|(c, a)| Op::Deposit(c, a)),
            (1u32..4, any::<u64>()).prop_map(|(j, s)| Op::Query(j, s)),
            (1u32..4, any::<u64>()).prop_map(|(j, s)| Op::Proof(j, s)),
            any::<u8>().prop_map(Op::Pay),
        ]
    }

    fn apply(l: &mut Ledger, id: ContractId, op: &Op) {
        let (c, s) = (addr("client"), addr("server"));
        let _ = match op {
            Op::Advance(d) => l.advance_time(l.now() + *d as u64),
            Op::Deposit(true, a) => l.deposit(&c, id, *a as u64),
            Op::Deposit(false, a) => l.deposit(&s, id, *a as u64),
            Op::Query(j, seed) => l.post(&c, id, Message::Query { j: *j, unit: unit(*seed) }),
            Op::Proof(j, seed) => l.post(&s, id, Message::Proof { j: *j, units: vec![unit(*seed)] }),
            Op::Pay(split) => {
                let escrow = l.contract(id).unwrap().escrow;
                let to_c = escrow.min(*split as u64);
                l.execute_payout(&c, id, &[(c.clone(), to_c), (s.clone(), escrow - to_c)])
            }
        };
    }

    proptest! {
        #[test]
        fn conservation_and_replay(ops in proptest::collection::vec(op(), 0..40)) {
            let (mut l, id) = setup(3);
            let supply = l.total_supply();
            for o in &ops {
                let before = l.clone();
                apply(&mut l, id, o);
                prop_assert_eq!(l.total_supply(), supply);
                // Stored payloads never change once accepted.
                for (j, u) in &before.contract(id).unwrap().posted_queries {
                    prop_assert_eq!(&l.contract(id).unwrap().posted_queries[j], u);
                }
            }
            let (mut replay, id2) = setup(3);
            for o in &ops {
                apply(&mut replay, id2, o);
            }
            prop_assert_eq!(replay, l);
        }

        #[test]
        fn out_of_schedule_posts_leave_state_unchanged(j in 1u32..4, at in 0u64..40, client in any::<bool>()) {
            let (mut l, id) = setup(3);
            if at > 0 {
                l.advance_time(at).unwrap();
            }
            let sched = l.contract(id).unwrap().params.schedule.clone();
            let sender = if client { addr("client") } else { addr("server") };
            let before = l.clone();
            let res = l.post(&sender, id, Message::Query { j, unit: unit(7) });
            let allowed = client && sched.label_of(at) == Some(TimeLabel::G(j, 1));
            prop_assert_eq!(res.is_ok(), allowed);
            if !allowed {
                prop_assert_eq!(l, before);
            }
        }
    }
}
