#![allow(dead_code)]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rcpor::crypto::CipherUnit;
use rcpor::ledger::{Address, Genesis, GenesisAccount, Ledger, TimeLabel};
use rcpor::por::CodecKind;
use rcpor::protocol::{
    client_init, client_query, server_init, server_prove, ClientSession, Parties, Price, PriceList, ServerSession,
    SessionConfig,
};
use rcpor::scenario::{Behaviors, FileSource, ScenarioSpec};
use rcpor::protocol::Variant;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn load_scenario(name: &str) -> ScenarioSpec {
    let text = std::fs::read_to_string(scenarios_dir().join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn session(z: u32, phi: u32) -> SessionConfig {
    SessionConfig {
        z,
        phi,
        block_payload_len: 16,
        codec: CodecKind::Identity,
        price: Price { o: 5, l: 2 },
        price_list: PriceList(vec![Price { o: 5, l: 2 }]),
        pi_max: None,
    }
}

pub fn spec(z: u32, phi: u32, file_size: usize, variant: Variant, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        session: session(z, phi),
        variant,
        file: FileSource::Size(file_size),
        behaviors: Behaviors::default(),
        seed,
        client_complains_on_dummy: true,
        genesis: None,
    }
}

pub fn random_file(len: usize, seed: u64) -> Vec<u8> {
    use rand::RngCore;
    let mut f = vec![0u8; len];
    ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut f);
    f
}

/// A committed session driven through one honest cycle.
pub struct OneCycle {
    pub ledger: Ledger,
    pub client: ClientSession,
    pub server: ServerSession,
    pub query: CipherUnit,
    pub proof: Vec<CipherUnit>,
}

pub fn parties(arbiter: bool) -> Parties {
    Parties {
        client: Address::new("client"),
        server: Address::new("server"),
        arbiter: arbiter.then(|| Address::new("arbiter")),
    }
}

pub fn funded_ledger(p: &Parties) -> Ledger {
    let mut accounts = vec![
        GenesisAccount { address: p.client.clone(), balance: 10_000 },
        GenesisAccount { address: p.server.clone(), balance: 10_000 },
    ];
    if let Some(a) = &p.arbiter {
        accounts.push(GenesisAccount { address: a.clone(), balance: 0 });
    }
    Ledger::from_genesis(&Genesis { accounts }).unwrap()
}

pub fn one_cycle(file: &[u8], cfg: &SessionConfig, seed: u64) -> OneCycle {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let p = parties(true);
    let mut ledger = funded_ledger(&p);
    let init = client_init(&mut ledger, &p, file, cfg, &mut rng).unwrap();
    let mut client = init.session;
    let c = client.contract;
    ledger.advance_to(c, TimeLabel::T1).unwrap();
    let check = server_init(&mut ledger, &p.server, &init.handoff).unwrap();
    assert!(check.a, "{:?}", check.reason);
    let server = check.session.unwrap();
    ledger.advance_to(c, TimeLabel::G(1, 1)).unwrap();
    client_query(&mut ledger, &mut client, 1, &mut rng).unwrap();
    ledger.advance_to(c, TimeLabel::G(1, 2)).unwrap();
    server_prove(&mut ledger, &server, 1, &mut rng).unwrap();
    let state = ledger.contract(c).unwrap();
    let query = state.posted_queries[&1].clone();
    let proof = state.posted_proofs[&1].clone();
    OneCycle { ledger, client, server, query, proof }
}
