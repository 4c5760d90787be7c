use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::encoding::{decode_proof_vector, session_layout, ProofShape};
use super::resolve::check_query;
use super::{key_gen, ClientComplaint, CpStatement, Price, PriceList, ProtocolError, QpStatement};
use crate::crypto::{CipherUnit, Commitment, Opening, PrfKey, UnitLayout};
use crate::ledger::{Address, ContractId, ContractParams, Ledger, Message, PostedComplaints, Schedule, SessionId, TimeLabel};
use crate::por::{self, derive_indices, Challenge, CodecKind, EncodedFile, PublicParams, Verdict};
use crate::sap::sap_init;

/// Client-chosen session parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub z: u32,
    pub phi: u32,
    pub block_payload_len: usize,
    #[serde(default)]
    pub codec: CodecKind,
    pub price: Price,
    pub price_list: PriceList,
    /// Padded proof size per entry, in cipher units.
    #[serde(default)]
    pub pi_max: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parties {
    pub client: Address,
    pub server: Address,
    pub arbiter: Option<Address>,
}

/// Everything the client hands the server off-chain.
#[derive(Clone, Debug)]
pub struct Handoff {
    pub client: Address,
    pub contract: ContractId,
    pub encoded: EncodedFile,
    pub z: u32,
    pub qp_statement: Vec<u8>,
    pub qp_randomness: Vec<u8>,
    pub g_qp: Commitment,
    pub sap_qp: SessionId,
    pub cp_statement: Vec<u8>,
    pub cp_randomness: Vec<u8>,
    pub g_cp: Commitment,
    pub sap_cp: SessionId,
}

#[derive(Clone, Debug)]
pub struct ClientSession {
    pub addr: Address,
    pub contract: ContractId,
    pub pp: PublicParams,
    pub qp: QpStatement,
    pub cp: CpStatement,
    pub opening_qp: Opening,
    pub opening_cp: Opening,
    pub layout: UnitLayout,
    pub queries: BTreeMap<u32, PrfKey>,
}

impl ClientSession {
    pub fn shape(&self) -> ProofShape {
        ProofShape::new(&self.pp, self.qp.pad_pi)
    }

    pub fn complaints_message(&self, complaints: Vec<ClientComplaint>) -> PostedComplaints<ClientComplaint> {
        PostedComplaints { complaints, opening: self.opening_qp.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct ClientInit {
    pub session: ClientSession,
    pub handoff: Handoff,
}

pub fn client_init(
    ledger: &mut Ledger,
    parties: &Parties,
    file: &[u8],
    cfg: &SessionConfig,
    rng: &mut impl RngCore,
) -> Result<ClientInit, ProtocolError> {
    let (encoded, pp) = por::setup(file, cfg.block_payload_len, cfg.phi, cfg.codec.codec().as_ref())?;
    client_init_with_params(ledger, parties, encoded, pp, cfg, rng)
}

/// Initiation from an already encoded file and its metadata. The metadata
/// is taken as given, which lets a test pair a file with foreign metadata.
pub fn client_init_with_params(
    ledger: &mut Ledger,
    parties: &Parties,
    encoded: EncodedFile,
    pp: PublicParams,
    cfg: &SessionConfig,
    rng: &mut impl RngCore,
) -> Result<ClientInit, ProtocolError> {
    if cfg.z == 0 {
        return Err(ProtocolError::Config("z must be positive".into()));
    }
    if !cfg.price_list.contains(cfg.price) {
        return Err(ProtocolError::PriceNotInList { o: cfg.price.o, l: cfg.price.l });
    }
    let (coin_star_client, p_server) = cfg.price_list.masked_deposits(cfg.z);
    let balance = ledger
        .balance(&parties.client)
        .ok_or_else(|| crate::ledger::LedgerError::UnknownAddress(parties.client.clone()))?;
    if balance < coin_star_client {
        return Err(ProtocolError::InsufficientBalance { balance, required: coin_star_client });
    }

    let kg = key_gen(rng, pp.m, cfg.pi_max)?;
    let qp = QpStatement { pad_pi: kg.pad_pi, k_bar: kg.k_bar, pp: pp.clone() };
    let cp = CpStatement {
        o: cfg.price.o,
        o_max: cfg.price_list.o_max(),
        l: cfg.price.l,
        l_max: cfg.price_list.l_max(),
        z: cfg.z,
    };
    let qp_statement = qp.encode();
    let cp_statement = cp.encode();
    let sap_qp = sap_init(ledger, &parties.client, &parties.server, &qp_statement, rng)?;
    let sap_cp = sap_init(ledger, &parties.client, &parties.server, &cp_statement, rng)?;

    let schedule = Schedule::sequential(cfg.z, ledger.now() + 1)?;
    let contract = ledger.deploy(
        &parties.client,
        ContractParams {
            client: parties.client.clone(),
            server: parties.server.clone(),
            arbiter: parties.arbiter.clone(),
            z: cfg.z,
            coin_star_client,
            p_server,
            sap_qp: sap_qp.session,
            sap_cp: sap_cp.session,
            schedule,
        },
    )?;
    ledger.advance_to(contract, TimeLabel::T0)?;
    ledger.deposit(&parties.client, contract, coin_star_client)?;

    let layout = session_layout(encoded.block_len(), pp.sigma.as_bytes().len());
    let session = ClientSession {
        addr: parties.client.clone(),
        contract,
        pp,
        qp,
        cp,
        opening_qp: Opening::new(qp_statement.clone(), sap_qp.randomness.clone()),
        opening_cp: Opening::new(cp_statement.clone(), sap_cp.randomness.clone()),
        layout,
        queries: BTreeMap::new(),
    };
    let handoff = Handoff {
        client: parties.client.clone(),
        contract,
        encoded,
        z: cfg.z,
        qp_statement,
        qp_randomness: sap_qp.randomness,
        g_qp: sap_qp.g_client,
        sap_qp: sap_qp.session,
        cp_statement,
        cp_randomness: sap_cp.randomness,
        g_cp: sap_cp.g_client,
        sap_cp: sap_cp.session,
    };
    Ok(ClientInit { session, handoff })
}

/// Fresh query key for cycle `j`, posted encrypted at `G(j,1)`.
pub fn client_query(
    ledger: &mut Ledger,
    cs: &mut ClientSession,
    j: u32,
    rng: &mut impl RngCore,
) -> Result<PrfKey, ProtocolError> {
    let key = por::gen_query(rng);
    post_query_payload(ledger, cs, j, key.as_bytes(), rng)?;
    cs.queries.insert(j, key);
    Ok(key)
}

/// Posts an arbitrary query payload; an honest client only ever posts a
/// fresh key.
pub fn post_query_payload(
    ledger: &mut Ledger,
    cs: &ClientSession,
    j: u32,
    payload: &[u8],
    rng: &mut impl RngCore,
) -> Result<CipherUnit, ProtocolError> {
    let unit = cs.layout.enc(&cs.qp.k_bar, payload, rng)?;
    ledger.post(&cs.addr, cs.contract, Message::Query { j, unit: unit.clone() })?;
    Ok(unit)
}

/// Decrypts and checks the proof of cycle `j`. On rejection the complaint
/// names the first failing entry: the first verification failure within
/// the decodable prefix, else the first undecodable entry.
pub fn client_verify(
    cs: &ClientSession,
    j: u32,
    proof_units: &[CipherUnit],
    query_unit: &CipherUnit,
) -> (Verdict, Option<ClientComplaint>) {
    let reject = |g: u32| (Verdict::reject(g as usize), Some(ClientComplaint { j, g }));
    let Some(key) = check_query(&cs.qp.k_bar, Some(query_unit)) else {
        return reject(1);
    };
    let shape = cs.shape();
    let (prefix, undecodable) = decode_proof_vector(proof_units, &shape, &cs.qp.k_bar);
    let mut indices = derive_indices(&key, cs.pp.phi, cs.pp.m);
    indices.truncate(prefix.len());
    let v = por::verify(&prefix, &Challenge::Indices(indices), &cs.pp);
    match (v.failing_index, undecodable) {
        (Some(g), _) => reject(g),
        (None, Some(f)) => reject(f),
        (None, None) => (Verdict::accept(), None),
    }
}
