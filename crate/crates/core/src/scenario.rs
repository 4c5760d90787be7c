//! Declarative scenario runner.
//!
//! A scenario names the session configuration, the file, the resolution
//! variant, a seed and per-role misbehaviours. `run` drives client, server,
//! arbiter and contract through every phase on a fresh ledger and returns a
//! report that re-derives the expected payouts from the final counters and
//! checks coin conservation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{count_hashes, CipherUnit};
use crate::ledger::{Address, Coin, Counters, Genesis, GenesisAccount, Ledger, Message, TimeLabel, TraceEntry};
use crate::por::{self, PublicParams, Verdict};
use crate::protocol::{
    self, arbiter_resolve_client, arbiter_resolve_server, client_init_with_params, client_query, client_verify,
    contract_finalize, post_query_payload, server_check, server_commit, server_prove, server_prove_with,
    server_reject_query, ClientComplaint, CounterKind, CounterUpdate, Parties, ProtocolError, ServerComplaint,
    ServerPass, SessionConfig, Variant,
};

pub const REPORT_SCHEMA: &str = "rcpor-report/1";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    SpecInvalid(String),
    #[error("counters exceed their bounds")]
    CounterOutOfBounds,
    #[error("reading the file source: {0}")]
    Io(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileSource {
    Size(usize),
    Path(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientBehavior {
    /// Supplies the root of a different file of the same size.
    IllFormedMetadata,
    /// Posts a ciphertext of a value outside the key space.
    InvalidQuery { j: u32 },
    /// Complains about an accepted proof.
    FalseAccusation { j: u32 },
    WithholdQuery { j: u32 },
}

fn first_entry() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerBehavior {
    /// Serves a corrupted block for challenge entry `entry` of cycle `j`.
    CorruptBlock {
        j: u32,
        #[serde(default = "first_entry")]
        entry: u32,
    },
    WithholdProof { j: u32 },
    /// Rejects a valid query: dummy proof plus complaint.
    FalseQueryComplaint { j: u32 },
    /// Deposits one coin less than required.
    ShortDeposit,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Behaviors {
    #[serde(default)]
    pub client: Vec<ClientBehavior>,
    #[serde(default)]
    pub server: Vec<ServerBehavior>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub session: SessionConfig,
    #[serde(default)]
    pub variant: Variant,
    pub file: FileSource,
    #[serde(default)]
    pub behaviors: Behaviors,
    pub seed: u64,
    /// Whether the client still complains about a cycle whose query it
    /// knows to be invalid or withheld.
    #[serde(default = "yes")]
    pub client_complains_on_dummy: bool,
    /// Starting balances; defaults give each party its deposit plus 1000.
    #[serde(default)]
    pub genesis: Option<Genesis>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::SpecInvalid(m));
        let s = &self.session;
        if s.z == 0 {
            return bad("z must be positive".into());
        }
        if s.phi == 0 {
            return bad("phi must be positive".into());
        }
        if s.price_list.0.is_empty() {
            return bad("empty price list".into());
        }
        let in_range = |j: u32| (1..=s.z).contains(&j);
        let mut seen = BTreeSet::new();
        for b in &self.behaviors.client {
            let j = match b {
                ClientBehavior::IllFormedMetadata => 0,
                ClientBehavior::InvalidQuery { j }
                | ClientBehavior::FalseAccusation { j }
                | ClientBehavior::WithholdQuery { j } => *j,
            };
            if j != 0 && !in_range(j) {
                return bad(format!("client behaviour target {j} outside 1..={}", s.z));
            }
            if !seen.insert(j) {
                return bad(format!("more than one client behaviour for cycle {j}"));
            }
        }
        seen.clear();
        for b in &self.behaviors.server {
            let j = match b {
                ServerBehavior::ShortDeposit => 0,
                ServerBehavior::CorruptBlock { j, entry } => {
                    if *entry == 0 || *entry > s.phi {
                        return bad(format!("corrupt entry {entry} outside 1..={}", s.phi));
                    }
                    *j
                }
                ServerBehavior::WithholdProof { j } | ServerBehavior::FalseQueryComplaint { j } => *j,
            };
            if j != 0 && !in_range(j) {
                return bad(format!("server behaviour target {j} outside 1..={}", s.z));
            }
            if !seen.insert(j) {
                return bad(format!("more than one server behaviour for cycle {j}"));
            }
        }
        Ok(())
    }

    fn client_behavior(&self, j: u32) -> Option<&ClientBehavior> {
        self.behaviors.client.iter().find(|b| match b {
            ClientBehavior::IllFormedMetadata => false,
            ClientBehavior::InvalidQuery { j: t }
            | ClientBehavior::FalseAccusation { j: t }
            | ClientBehavior::WithholdQuery { j: t } => *t == j,
        })
    }

    fn server_behavior(&self, j: u32) -> Option<&ServerBehavior> {
        self.behaviors.server.iter().find(|b| match b {
            ServerBehavior::ShortDeposit => false,
            ServerBehavior::CorruptBlock { j: t, .. }
            | ServerBehavior::WithholdProof { j: t }
            | ServerBehavior::FalseQueryComplaint { j: t } => *t == j,
        })
    }
}

/// Inputs of the closed-form payout formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoutInputs {
    pub z: u32,
    pub o: Coin,
    pub l: Coin,
    pub coin_star_client: Coin,
    pub coin_star_server: Coin,
    pub refund: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payouts {
    pub client: Coin,
    pub server: Coin,
    pub arbiter: Option<Coin>,
}

/// Closed-form payouts, evaluated cycle by cycle: every cycle not charged
/// to the server moves `o` to it, and each counter moves `l` according to
/// the variant.
pub fn expected_payout(variant: Variant, y: &Counters, s: &PayoutInputs) -> Result<Payouts, ScenarioError> {
    let arbiter_share = match variant {
        Variant::Arbiter => Some(0),
        Variant::Arbiterless => None,
    };
    if s.refund {
        return Ok(Payouts { client: s.coin_star_client, server: s.coin_star_server, arbiter: arbiter_share });
    }
    let counted = [y.y_c, y.y_c_prime, y.y_s, y.y_s_prime]
        .iter()
        .try_fold(0u64, |acc, v| acc.checked_add(*v))
        .ok_or(ScenarioError::CounterOutOfBounds)?;
    if counted > s.z as u64 {
        return Err(ScenarioError::CounterOutOfBounds);
    }
    let mut client = s.coin_star_client as i128;
    let mut server = s.coin_star_server as i128;
    let mut arbiter = 0i128;
    for _ in 0..(s.z as u64 - y.y_s) {
        client -= s.o as i128;
        server += s.o as i128;
    }
    let l = s.l as i128;
    match variant {
        Variant::Arbiter => {
            for _ in 0..y.y_c + y.y_c_prime {
                client -= l;
                arbiter += l;
            }
            for _ in 0..y.y_s + y.y_s_prime {
                server -= l;
                arbiter += l;
            }
        }
        Variant::Arbiterless => {
            for _ in 0..y.y_c {
                client -= l;
                server += l;
            }
            for _ in 0..y.y_s {
                server -= l;
                client += l;
            }
        }
    }
    let coin = |v: i128| Coin::try_from(v).map_err(|_| ScenarioError::CounterOutOfBounds);
    Ok(Payouts {
        client: coin(client)?,
        server: coin(server)?,
        arbiter: match variant {
            Variant::Arbiter => Some(coin(arbiter)?),
            Variant::Arbiterless => None,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub m: u32,
    pub phi: u32,
    pub z: u32,
    pub pad_pi: u32,
    pub pi_act: u32,
    pub unit_len: usize,
    pub proof_units: usize,
    pub query_bytes: usize,
    pub proof_bytes: usize,
    pub coin_star_client: Coin,
    pub p_server: Coin,
    pub o: Coin,
    pub l: Coin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub j: u32,
    pub query_bytes: Option<usize>,
    pub proof_bytes: Option<usize>,
    /// Server's view of the query (`b_j`); absent if it posted nothing.
    pub b: Option<bool>,
    /// Client verdict (`d_j`).
    pub d: bool,
    pub failing_index: Option<u32>,
    /// Hash invocations of the client's verification.
    pub verify_hashes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplaintReport {
    pub server_filed: Vec<ServerComplaint>,
    pub client_filed: Vec<ClientComplaint>,
    pub client_admitted: Vec<ClientComplaint>,
    pub client_filtered: Vec<ClientComplaint>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub deposited: Coin,
    pub distributed: Coin,
    pub supply_before: u128,
    pub supply_after: u128,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoutDeltas {
    pub client: i128,
    pub server: i128,
    pub arbiter: i128,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub spec: ScenarioSpec,
    pub parties: BTreeMap<String, Address>,
    pub pp: PublicParams,
    pub session: SessionSummary,
    pub accepted: bool,
    pub refund_path: bool,
    pub server_reason: Option<String>,
    pub deposits: BTreeMap<String, Coin>,
    pub cycles: Vec<CycleReport>,
    pub complaints: ComplaintReport,
    pub counters: Counters,
    pub attribution: BTreeMap<u32, CounterKind>,
    pub balances_initial: BTreeMap<Address, Coin>,
    pub balances_final: BTreeMap<Address, Coin>,
    /// What each party received from the escrow, read off balances.
    pub payouts_actual: Payouts,
    pub payouts_expected: Payouts,
    pub payout_deltas: PayoutDeltas,
    pub conservation: Conservation,
    pub exclusivity_ok: bool,
    pub shape_constant: bool,
    pub valid: bool,
    pub trace: Vec<TraceEntry>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCheck {
    pub conservation_ok: bool,
    pub payouts_ok: bool,
    pub exclusivity_ok: bool,
    pub flagged_valid: bool,
    pub problems: Vec<String>,
}

impl ReportCheck {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Re-derives conservation and expected payouts from a report's recorded
/// balances and counters, without trusting its own verdicts.
pub fn verify_report(r: &RunReport) -> ReportCheck {
    let mut problems = Vec::new();
    let role = |name: &str| r.parties.get(name);
    let bal = |m: &BTreeMap<Address, Coin>, name: &str| role(name).and_then(|a| m.get(a)).copied().unwrap_or(0);
    let dep = |name: &str| r.deposits.get(name).copied().unwrap_or(0);

    let received = |name: &str| bal(&r.balances_final, name) as i128 - bal(&r.balances_initial, name) as i128 + dep(name) as i128;
    let actual_client = received("client");
    let actual_server = received("server");
    let actual_arbiter = received("arbiter");
    let supply = |m: &BTreeMap<Address, Coin>| m.values().map(|v| *v as u128).sum::<u128>();

    let deposited = dep("client") as i128 + dep("server") as i128;
    let conservation_ok = actual_client + actual_server + actual_arbiter == deposited
        && supply(&r.balances_initial) == supply(&r.balances_final);
    if !conservation_ok {
        problems.push("distributed coins differ from deposits".into());
    }

    let inputs = PayoutInputs {
        z: r.session.z,
        o: r.session.o,
        l: r.session.l,
        coin_star_client: dep("client"),
        coin_star_server: dep("server"),
        refund: r.refund_path,
    };
    let payouts_ok = match expected_payout(r.spec.variant, &r.counters, &inputs) {
        Ok(e) => {
            let same = e.client as i128 == actual_client
                && e.server as i128 == actual_server
                && e.arbiter.unwrap_or(0) as i128 == actual_arbiter;
            if !same {
                problems.push("payouts differ from the closed-form formulas".into());
            }
            same
        }
        Err(e) => {
            problems.push(e.to_string());
            false
        }
    };

    let exclusivity_ok = exclusive(&r.counters, &r.attribution, r.session.z);
    if !exclusivity_ok {
        problems.push("a cycle carries more than one counter".into());
    }
    if !r.valid {
        problems.push("report not flagged VALID".into());
    }
    ReportCheck { conservation_ok, payouts_ok, exclusivity_ok, flagged_valid: r.valid, problems }
}

fn exclusive(y: &Counters, attribution: &BTreeMap<u32, CounterKind>, z: u32) -> bool {
    let mut tally = Counters::default();
    for (j, k) in attribution {
        if !(1..=z).contains(j) {
            return false;
        }
        match k {
            CounterKind::YC => tally.y_c += 1,
            CounterKind::YCPrime => tally.y_c_prime += 1,
            CounterKind::YS => tally.y_s += 1,
            CounterKind::YSPrime => tally.y_s_prime += 1,
        }
    }
    tally == *y
}

fn load_file(src: &FileSource, rng: &mut impl RngCore) -> Result<Vec<u8>, ScenarioError> {
    match src {
        FileSource::Size(0) => Err(ScenarioError::SpecInvalid("file size must be positive".into())),
        FileSource::Size(n) => {
            let mut f = vec![0u8; *n];
            rng.fill_bytes(&mut f);
            Ok(f)
        }
        FileSource::Path(p) => std::fs::read(p).map_err(|e| ScenarioError::Io(format!("{}: {e}", p.display()))),
    }
}

/// Byte length of the value outside the query key space posted by a
/// misbehaving client.
const INVALID_QUERY_LEN: usize = 15;

pub fn run(spec: &ScenarioSpec) -> Result<RunReport, ScenarioError> {
    spec.validate()?;
    let cfg = &spec.session;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let client = Address::new("client");
    let server = Address::new("server");
    let arbiter = (spec.variant == Variant::Arbiter).then(|| Address::new("arbiter"));
    let parties = Parties { client: client.clone(), server: server.clone(), arbiter: arbiter.clone() };

    let (need_c, need_s) = cfg.price_list.masked_deposits(cfg.z);
    let genesis = spec.genesis.clone().unwrap_or_else(|| {
        let mut accounts = vec![
            GenesisAccount { address: client.clone(), balance: need_c + 1000 },
            GenesisAccount { address: server.clone(), balance: need_s + 1000 },
        ];
        if let Some(a) = &arbiter {
            accounts.push(GenesisAccount { address: a.clone(), balance: 0 });
        }
        Genesis { accounts }
    });
    let mut ledger = Ledger::from_genesis(&genesis).map_err(ProtocolError::from)?;
    for a in [Some(&client), Some(&server), arbiter.as_ref()].into_iter().flatten() {
        if ledger.balance(a).is_none() {
            return Err(ScenarioError::SpecInvalid(format!("genesis lacks account {a}")));
        }
    }
    let balances_initial = ledger.accounts().clone();
    let supply_before = ledger.total_supply();

    // Initiation.
    let file = load_file(&spec.file, &mut rng)?;
    let codec = cfg.codec.codec();
    let (encoded, mut pp) = por::setup(&file, cfg.block_payload_len, cfg.phi, codec.as_ref()).map_err(ProtocolError::from)?;
    if spec.behaviors.client.contains(&ClientBehavior::IllFormedMetadata) {
        let mut other = file.clone();
        while other == file {
            rng.fill_bytes(&mut other);
        }
        pp = por::setup(&other, cfg.block_payload_len, cfg.phi, codec.as_ref()).map_err(ProtocolError::from)?.1;
    }
    let init = client_init_with_params(&mut ledger, &parties, encoded, pp, cfg, &mut rng)?;
    let mut cs = init.session;
    let contract = cs.contract;

    ledger.advance_to(contract, TimeLabel::T1).map_err(ProtocolError::from)?;
    let check = server_check(&mut ledger, &server, &init.handoff)?;
    let p_server = ledger.contract(contract).map_err(ProtocolError::from)?.params.p_server;
    let server_deposit = if spec.behaviors.server.contains(&ServerBehavior::ShortDeposit) {
        p_server.saturating_sub(1)
    } else {
        p_server
    };
    server_commit(&mut ledger, &server, contract, check.a, server_deposit)?;
    let state = ledger.contract(contract).map_err(ProtocolError::from)?;
    let committed = state.a_flag == Some(true) && state.deposited_server >= p_server;

    let shape = cs.shape();
    let session = SessionSummary {
        m: cs.pp.m,
        phi: cs.pp.phi,
        z: cfg.z,
        pad_pi: cs.qp.pad_pi,
        pi_act: protocol::entry_real_units(cs.pp.m),
        unit_len: cs.layout.unit_len(),
        proof_units: shape.total_units(),
        query_bytes: cs.layout.unit_len(),
        proof_bytes: shape.total_units() * cs.layout.unit_len(),
        coin_star_client: state.params.coin_star_client,
        p_server,
        o: cfg.price.o,
        l: cfg.price.l,
    };

    let mut cycles = Vec::new();
    let mut complaints = ComplaintReport::default();
    let mut update = CounterUpdate::default();

    if !committed {
        ledger.advance_to(contract, TimeLabel::T2).map_err(ProtocolError::from)?;
        protocol::refund(&mut ledger, &client, contract)?;
    } else {
        let ss = check.session.as_ref().expect("accepted check carries a session");

        // Billing cycles.
        for j in 1..=cfg.z {
            ledger.advance_to(contract, TimeLabel::G(j, 1)).map_err(ProtocolError::from)?;
            let cb = spec.client_behavior(j);
            let mut knows_bad = false;
            match cb {
                Some(ClientBehavior::InvalidQuery { .. }) => {
                    let mut junk = [0u8; INVALID_QUERY_LEN];
                    rng.fill_bytes(&mut junk);
                    post_query_payload(&mut ledger, &cs, j, &junk, &mut rng)?;
                    knows_bad = true;
                }
                Some(ClientBehavior::WithholdQuery { .. }) => knows_bad = true,
                _ => {
                    client_query(&mut ledger, &mut cs, j, &mut rng)?;
                }
            }

            ledger.advance_to(contract, TimeLabel::G(j, 2)).map_err(ProtocolError::from)?;
            let outcome = match spec.server_behavior(j) {
                Some(ServerBehavior::WithholdProof { .. }) => None,
                Some(ServerBehavior::FalseQueryComplaint { .. }) => Some(server_reject_query(&mut ledger, ss, j, &mut rng)?),
                Some(ServerBehavior::CorruptBlock { entry, .. }) => {
                    let at = *entry as usize - 1;
                    Some(server_prove_with(&mut ledger, ss, j, &mut rng, |pi| {
                        if let Some(e) = pi.entries.get_mut(at) {
                            e.block[0] ^= 0x01;
                        }
                    })?)
                }
                _ => Some(server_prove(&mut ledger, ss, j, &mut rng)?),
            };
            if let Some(m) = outcome.and_then(|o| o.complaint) {
                complaints.server_filed.push(m);
            }

            let state = ledger.contract(contract).map_err(ProtocolError::from)?;
            let query = state.posted_queries.get(&j).cloned();
            let proof: Vec<CipherUnit> = state.posted_proofs.get(&j).cloned().unwrap_or_default();
            let ((verdict, complaint), hashes) = match &query {
                Some(q) => count_hashes(|| client_verify(&cs, j, &proof, q)),
                None => ((Verdict::reject(1), Some(ClientComplaint { j, g: 1 })), 0),
            };
            let complaint = match (complaint, cb) {
                (None, Some(ClientBehavior::FalseAccusation { .. })) => Some(ClientComplaint { j, g: 1 }),
                (Some(_), _) if knows_bad && !spec.client_complains_on_dummy => None,
                (c, _) => c,
            };
            if let Some(m) = complaint {
                complaints.client_filed.push(m);
            }
            cycles.push(CycleReport {
                j,
                query_bytes: query.as_ref().map(CipherUnit::len),
                proof_bytes: state.posted_proofs.get(&j).map(|u| u.iter().map(CipherUnit::len).sum()),
                b: outcome.map(|o| o.query_valid && o.complaint.is_none()),
                d: verdict.accepted,
                failing_index: verdict.failing_index,
                verify_hashes: hashes,
            });
        }

        // Dispute resolution.
        let pass: ServerPass;
        match spec.variant {
            Variant::Arbiter => {
                ledger.advance_to(contract, TimeLabel::K(2)).map_err(ProtocolError::from)?;
                pass = arbiter_resolve_server(&complaints.server_filed, &ss.opening_qp, &ledger, contract)?;
                ledger.advance_to(contract, TimeLabel::K(5)).map_err(ProtocolError::from)?;
                update = arbiter_resolve_client(&complaints.client_filed, &cs.opening_qp, &pass, &ledger, contract)?;
                ledger.advance_to(contract, TimeLabel::K(6)).map_err(ProtocolError::from)?;
                if !complaints.server_filed.is_empty() || !complaints.client_filed.is_empty() {
                    let r = arbiter.as_ref().expect("arbiter variant");
                    ledger.post(r, contract, Message::Counters(update.counters)).map_err(ProtocolError::from)?;
                }
            }
            Variant::Arbiterless => {
                ledger.advance_to(contract, TimeLabel::K(1)).map_err(ProtocolError::from)?;
                if !complaints.server_filed.is_empty() {
                    let msg = ss.complaints_message(complaints.server_filed.clone());
                    ledger.post(&server, contract, Message::ServerComplaints(msg)).map_err(ProtocolError::from)?;
                }
                ledger.advance_to(contract, TimeLabel::K(4)).map_err(ProtocolError::from)?;
                if !complaints.client_filed.is_empty() {
                    let msg = cs.complaints_message(complaints.client_filed.clone());
                    ledger.post(&client, contract, Message::ClientComplaints(msg)).map_err(ProtocolError::from)?;
                }
                ledger.advance_to(contract, TimeLabel::K(6)).map_err(ProtocolError::from)?;
                let (p, u) = contract_finalize(&mut ledger, contract)?;
                pass = p;
                update = u;
            }
        }
        let mut seen = BTreeSet::new();
        for m in &complaints.client_filed {
            if (1..=cfg.z).contains(&m.j) && !pass.v.contains(&m.j) && seen.insert(m.j) {
                complaints.client_admitted.push(*m);
            } else {
                complaints.client_filtered.push(*m);
            }
        }

        // Coin transfer.
        ledger.advance_to(contract, TimeLabel::L).map_err(ProtocolError::from)?;
        match spec.variant {
            Variant::Arbiter => protocol::payout_arbiter_variant(&mut ledger, &client, contract, &cs.opening_cp)?,
            Variant::Arbiterless => protocol::payout_arbiterless_variant(&mut ledger, &client, contract, &cs.opening_cp)?,
        };
    }

    let state = ledger.contract(contract).map_err(ProtocolError::from)?;
    let counters = state.counters;
    let deposits = BTreeMap::from([
        ("client".to_string(), state.deposited_client),
        ("server".to_string(), state.deposited_server),
    ]);
    let balances_final = ledger.accounts().clone();
    let received = |a: &Address, dep: Coin| balances_final[a] as i128 - balances_initial[a] as i128 + dep as i128;
    let rc = received(&client, state.deposited_client);
    let rs = received(&server, state.deposited_server);
    let ra = arbiter.as_ref().map(|a| received(a, 0)).unwrap_or(0);
    let to_coin = |v: i128| Coin::try_from(v).unwrap_or(Coin::MAX);
    let payouts_actual = Payouts {
        client: to_coin(rc),
        server: to_coin(rs),
        arbiter: arbiter.as_ref().map(|_| to_coin(ra)),
    };
    let inputs = PayoutInputs {
        z: cfg.z,
        o: cfg.price.o,
        l: cfg.price.l,
        coin_star_client: state.deposited_client,
        coin_star_server: state.deposited_server,
        refund: !committed,
    };
    let payouts_expected = expected_payout(spec.variant, &counters, &inputs)?;
    let payout_deltas = PayoutDeltas {
        client: rc - payouts_expected.client as i128,
        server: rs - payouts_expected.server as i128,
        arbiter: ra - payouts_expected.arbiter.unwrap_or(0) as i128,
    };
    let deposited = state.deposited_client + state.deposited_server;
    let distributed = to_coin(rc + rs + ra);
    let supply_after = ledger.total_supply();
    let conservation = Conservation {
        deposited,
        distributed,
        supply_before,
        supply_after,
        ok: rc + rs + ra == deposited as i128 && supply_before == supply_after && state.paid_out && state.escrow == 0,
    };
    let exclusivity_ok = exclusive(&counters, &update.attribution, cfg.z);
    let shape_constant = cycles.iter().all(|c| {
        c.query_bytes.is_none_or(|n| n == session.query_bytes) && c.proof_bytes.is_none_or(|n| n == session.proof_bytes)
    });
    let payouts_match = payout_deltas == PayoutDeltas { client: 0, server: 0, arbiter: 0 };

    Ok(RunReport {
        schema: REPORT_SCHEMA.to_string(),
        spec: spec.clone(),
        parties: [("client", Some(&client)), ("server", Some(&server)), ("arbiter", arbiter.as_ref())]
            .into_iter()
            .filter_map(|(k, v)| v.map(|a| (k.to_string(), a.clone())))
            .collect(),
        pp: cs.pp.clone(),
        session,
        accepted: check.a,
        refund_path: !committed,
        server_reason: check.reason,
        deposits,
        cycles,
        complaints,
        counters,
        attribution: update.attribution,
        balances_initial,
        balances_final,
        payouts_actual,
        payouts_expected,
        payout_deltas,
        valid: conservation.ok && payouts_match && exclusivity_ok && shape_constant,
        conservation,
        exclusivity_ok,
        shape_constant,
        trace: ledger.trace().to_vec(),
    })
}

