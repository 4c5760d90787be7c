use rand::RngCore;

use super::client::Handoff;
use super::encoding::{dummy_proof_vector, encode_proof_vector, session_layout, ProofShape};
use super::resolve::check_query;
use super::{CpStatement, ProtocolError, QpStatement, ServerComplaint};
use crate::crypto::{Opening, UnitLayout};
use crate::ledger::{Address, Coin, ContractId, Ledger, Message, PostedComplaints};
use crate::por::{ProofVector, Prover};
use crate::sap::sap_agree;

pub struct ServerSession {
    pub addr: Address,
    pub contract: ContractId,
    pub prover: Prover,
    pub qp: QpStatement,
    pub opening_qp: Opening,
    pub opening_cp: Opening,
    pub layout: UnitLayout,
}

impl ServerSession {
    pub fn shape(&self) -> ProofShape {
        ProofShape::new(&self.qp.pp, self.qp.pad_pi)
    }

    pub fn complaints_message(&self, complaints: Vec<ServerComplaint>) -> PostedComplaints<ServerComplaint> {
        PostedComplaints { complaints, opening: self.opening_qp.clone() }
    }
}

/// Outcome of the server's acceptance checks. `session` is present only
/// when `a` is true.
pub struct ServerCheck {
    pub a: bool,
    pub reason: Option<String>,
    pub session: Option<ServerSession>,
}

impl ServerCheck {
    fn reject(reason: impl Into<String>) -> Self {
        ServerCheck { a: false, reason: Some(reason.into()), session: None }
    }
}

/// Checks contract parameters and the client deposit, agrees on both
/// statements, and rebuilds the root over the received file.
pub fn server_check(ledger: &mut Ledger, addr: &Address, h: &Handoff) -> Result<ServerCheck, ProtocolError> {
    let c = ledger.contract(h.contract)?;
    let p = &c.params;
    if p.client != h.client || p.server != *addr || p.sap_qp != h.sap_qp || p.sap_cp != h.sap_cp {
        return Ok(ServerCheck::reject("contract parties or sessions differ"));
    }
    let Ok(cp) = CpStatement::decode(&h.cp_statement) else {
        return Ok(ServerCheck::reject("malformed coin parameters"));
    };
    let z = cp.z as Coin;
    if cp.z != h.z
        || p.z != h.z
        || p.coin_star_client != z * (cp.o_max + cp.l_max)
        || p.p_server != z * cp.l_max
    {
        return Ok(ServerCheck::reject("contract parameters inconsistent with coin parameters"));
    }
    if c.deposited_client < p.coin_star_client {
        return Ok(ServerCheck::reject("client deposit missing"));
    }

    let (_, ok_qp) = sap_agree(ledger, &h.qp_statement, &h.qp_randomness, &h.g_qp, &h.client, h.sap_qp);
    if !ok_qp {
        return Ok(ServerCheck::reject("query parameter agreement failed"));
    }
    let (_, ok_cp) = sap_agree(ledger, &h.cp_statement, &h.cp_randomness, &h.g_cp, &h.client, h.sap_cp);
    if !ok_cp {
        return Ok(ServerCheck::reject("coin parameter agreement failed"));
    }
    let Ok(qp) = QpStatement::decode(&h.qp_statement) else {
        return Ok(ServerCheck::reject("malformed query parameters"));
    };
    if h.encoded.m() != qp.pp.m as usize || qp.pp.phi == 0 || qp.pp.phi > qp.pp.m {
        return Ok(ServerCheck::reject("file length or phi inconsistent with metadata"));
    }
    let prover = Prover::new(h.encoded.clone())?;
    if prover.root() != qp.pp.sigma {
        return Ok(ServerCheck::reject("root mismatch"));
    }
    let layout = session_layout(h.encoded.block_len(), qp.pp.sigma.as_bytes().len());
    Ok(ServerCheck {
        a: true,
        reason: None,
        session: Some(ServerSession {
            addr: addr.clone(),
            contract: h.contract,
            prover,
            qp,
            opening_qp: Opening::new(h.qp_statement.clone(), h.qp_randomness.clone()),
            opening_cp: Opening::new(h.cp_statement.clone(), h.cp_randomness.clone()),
            layout,
        }),
    })
}

/// Posts the acceptance flag at `T1` and, when accepting, deposits `amount`.
pub fn server_commit(
    ledger: &mut Ledger,
    addr: &Address,
    contract: ContractId,
    a: bool,
    amount: Coin,
) -> Result<(), ProtocolError> {
    ledger.post(addr, contract, Message::Accept { a })?;
    if a {
        ledger.deposit(addr, contract, amount)?;
    }
    Ok(())
}

/// Checks and commits with the required deposit `p_S`.
pub fn server_init(ledger: &mut Ledger, addr: &Address, h: &Handoff) -> Result<ServerCheck, ProtocolError> {
    let check = server_check(ledger, addr, h)?;
    let p_server = ledger.contract(h.contract)?.params.p_server;
    server_commit(ledger, addr, h.contract, check.a, p_server)?;
    Ok(check)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProveOutcome {
    /// Whether the posted query was a valid key.
    pub query_valid: bool,
    pub complaint: Option<ServerComplaint>,
    pub units: usize,
}

pub fn server_prove(
    ledger: &mut Ledger,
    ss: &ServerSession,
    j: u32,
    rng: &mut impl RngCore,
) -> Result<ProveOutcome, ProtocolError> {
    server_prove_with(ledger, ss, j, rng, |_| {})
}

/// Answers cycle `j`'s query at `G(j,2)`. A valid query gets a padded
/// encrypted proof (passed through `tamper` first); an invalid or missing
/// one gets a complaint and a dummy vector of the same shape.
pub fn server_prove_with(
    ledger: &mut Ledger,
    ss: &ServerSession,
    j: u32,
    rng: &mut impl RngCore,
    tamper: impl FnOnce(&mut ProofVector),
) -> Result<ProveOutcome, ProtocolError> {
    let unit = ledger.contract(ss.contract)?.posted_queries.get(&j).cloned();
    let Some(key) = check_query(&ss.qp.k_bar, unit.as_ref()) else {
        return server_reject_query(ledger, ss, j, rng).map(|o| ProveOutcome { query_valid: false, ..o });
    };
    let mut pi = ss.prover.prove(&key, &ss.qp.pp)?;
    tamper(&mut pi);
    let units = encode_proof_vector(&pi, &ss.qp.k_bar, &ss.layout, ss.qp.pad_pi, rng)?;
    let n = units.len();
    ledger.post(&ss.addr, ss.contract, Message::Proof { j, units })?;
    Ok(ProveOutcome { query_valid: true, complaint: None, units: n })
}

/// Posts a dummy proof and complains about cycle `j` regardless of the
/// query.
pub fn server_reject_query(
    ledger: &mut Ledger,
    ss: &ServerSession,
    j: u32,
    rng: &mut impl RngCore,
) -> Result<ProveOutcome, ProtocolError> {
    let units = dummy_proof_vector(&ss.shape(), &ss.layout, rng);
    let n = units.len();
    ledger.post(&ss.addr, ss.contract, Message::Proof { j, units })?;
    Ok(ProveOutcome { query_valid: true, complaint: Some(ServerComplaint { j }), units: n })
}
