//! Dispute resolution, shared by the arbiter and the contract-run resolver.
//!
//! Server complaints are processed first and yield the set `v` of cycles
//! whose query was invalid; client complaints about those cycles are
//! dropped. Each cycle contributes to at most one counter.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::encoding::{decode_entry, ProofShape};
use super::{ClientComplaint, ProtocolError, QpStatement, ServerComplaint, Variant};
use crate::crypto::{dec, CipherUnit, Opening, PrfKey, SymKey};
use crate::ledger::{ContractId, ContractState, Counters, Ledger, Message};
use crate::por::{derive_index, verify_single};
use crate::sap::sap_verify_recorded;

/// `Some(key)` iff `unit` decrypts under `k_bar` to an element of the
/// query key space.
pub fn check_query(k_bar: &SymKey, unit: Option<&CipherUnit>) -> Option<PrfKey> {
    let plain = dec(k_bar, unit?).ok()?;
    PrfKey::from_slice(&plain).ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CounterKind {
    YC,
    YCPrime,
    YS,
    YSPrime,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterUpdate {
    pub counters: Counters,
    pub attribution: BTreeMap<u32, CounterKind>,
}

impl CounterUpdate {
    /// Increments `kind` for cycle `j` unless `j` already carries a counter.
    fn bump(&mut self, j: u32, kind: CounterKind) {
        if self.attribution.contains_key(&j) {
            return;
        }
        self.attribution.insert(j, kind);
        let y = &mut self.counters;
        match kind {
            CounterKind::YC => y.y_c += 1,
            CounterKind::YCPrime => y.y_c_prime += 1,
            CounterKind::YS => y.y_s += 1,
            CounterKind::YSPrime => y.y_s_prime += 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerPass {
    pub update: CounterUpdate,
    /// Cycles whose query was found invalid.
    pub v: BTreeSet<u32>,
}

fn opened_qp(ledger: &Ledger, c: &ContractState, opening: &Opening) -> Option<QpStatement> {
    if !sap_verify_recorded(ledger, c.params.sap_qp, opening) {
        return None;
    }
    QpStatement::decode(&opening.statement).ok()
}

/// Keeps the first complaint per cycle among cycles `1..=z`.
fn first_per_cycle<T: Copy>(items: &[T], z: u32, j_of: impl Fn(&T) -> u32) -> Vec<T> {
    let mut seen = BTreeSet::new();
    items
        .iter()
        .filter(|c| {
            let j = j_of(c);
            (1..=z).contains(&j) && seen.insert(j)
        })
        .copied()
        .collect()
}

fn server_pass(
    variant: Variant,
    complaints: &[ServerComplaint],
    opening: &Opening,
    ledger: &Ledger,
    c: &ContractState,
) -> ServerPass {
    let mut pass = ServerPass::default();
    let Some(qp) = opened_qp(ledger, c, opening) else {
        return pass;
    };
    for m in first_per_cycle(complaints, c.params.z, |m| m.j) {
        if check_query(&qp.k_bar, c.posted_queries.get(&m.j)).is_none() {
            pass.update.bump(m.j, CounterKind::YC);
            pass.v.insert(m.j);
        } else if variant == Variant::Arbiter {
            pass.update.bump(m.j, CounterKind::YSPrime);
        }
    }
    pass
}

enum Fault {
    Client,
    Server,
    Nobody,
}

fn client_fault(qp: &QpStatement, c: &ContractState, m: ClientComplaint) -> Fault {
    let Some(key) = check_query(&qp.k_bar, c.posted_queries.get(&m.j)) else {
        return Fault::Client;
    };
    if m.g == 0 || m.g > qp.pp.phi {
        return Fault::Nobody;
    }
    let shape = ProofShape::new(&qp.pp, qp.pad_pi);
    let entry = c
        .posted_proofs
        .get(&m.j)
        .and_then(|units| decode_entry(units, m.g, &shape, &qp.k_bar));
    match entry {
        None => Fault::Server,
        Some(e) => {
            let q = derive_index(&key, m.g as u64, qp.pp.m);
            if verify_single(&e, q, &qp.pp).accepted {
                Fault::Nobody
            } else {
                Fault::Server
            }
        }
    }
}

fn client_pass(
    variant: Variant,
    complaints: &[ClientComplaint],
    opening: &Opening,
    prior: &ServerPass,
    ledger: &Ledger,
    c: &ContractState,
) -> CounterUpdate {
    let mut update = prior.update.clone();
    let Some(qp) = opened_qp(ledger, c, opening) else {
        return update;
    };
    let kept: Vec<_> = first_per_cycle(complaints, c.params.z, |m| m.j)
        .into_iter()
        .filter(|m| !prior.v.contains(&m.j))
        .collect();
    for m in kept {
        match (client_fault(&qp, c, m), variant) {
            (Fault::Client, _) => update.bump(m.j, CounterKind::YC),
            (Fault::Server, _) => update.bump(m.j, CounterKind::YS),
            (Fault::Nobody, Variant::Arbiter) => update.bump(m.j, CounterKind::YCPrime),
            (Fault::Nobody, Variant::Arbiterless) => {}
        }
    }
    update
}

pub fn arbiter_resolve_server(
    complaints: &[ServerComplaint],
    opening: &Opening,
    ledger: &Ledger,
    contract: ContractId,
) -> Result<ServerPass, ProtocolError> {
    let c = ledger.contract(contract)?;
    Ok(server_pass(Variant::Arbiter, complaints, opening, ledger, c))
}

/// Resolves client complaints on top of the server pass; the returned
/// counters are cumulative.
pub fn arbiter_resolve_client(
    complaints: &[ClientComplaint],
    opening: &Opening,
    prior: &ServerPass,
    ledger: &Ledger,
    contract: ContractId,
) -> Result<CounterUpdate, ProtocolError> {
    let c = ledger.contract(contract)?;
    Ok(client_pass(Variant::Arbiter, complaints, opening, prior, ledger, c))
}

/// Contract-run resolution over the complaints posted on-chain. Returns the
/// server pass (for its `v`) and the cumulative counters.
pub fn contract_resolve(ledger: &Ledger, contract: ContractId) -> Result<(ServerPass, CounterUpdate), ProtocolError> {
    let c = ledger.contract(contract)?;
    let pass = match &c.server_complaints {
        Some(p) => server_pass(Variant::Arbiterless, &p.complaints, &p.opening, ledger, c),
        None => ServerPass::default(),
    };
    let update = match &c.client_complaints {
        Some(p) => client_pass(Variant::Arbiterless, &p.complaints, &p.opening, &pass, ledger, c),
        None => pass.update.clone(),
    };
    Ok((pass, update))
}

/// Resolves and records the counters at `K6` under the contract's address.
pub fn contract_finalize(ledger: &mut Ledger, contract: ContractId) -> Result<(ServerPass, CounterUpdate), ProtocolError> {
    let (pass, update) = contract_resolve(ledger, contract)?;
    let addr = ledger.contract(contract)?.address.clone();
    ledger.post(&addr, contract, Message::Counters(update.counters))?;
    Ok((pass, update))
}
