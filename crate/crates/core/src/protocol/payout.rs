use super::{CpStatement, ProtocolError};
use crate::crypto::Opening;
use crate::ledger::{Address, Coin, ContractId, ContractState, Counters, Ledger};
use crate::sap::sap_verify_recorded;

pub type Distribution = Vec<(Address, Coin)>;

fn to_coin(v: i128) -> Result<Coin, ProtocolError> {
    Coin::try_from(v).map_err(|_| ProtocolError::CounterOutOfBounds)
}

fn check_bounds(y: &Counters, z: u32) -> Result<(), ProtocolError> {
    if y.total() > z as u64 {
        return Err(ProtocolError::CounterOutOfBounds);
    }
    Ok(())
}

/// `coin_C = c*_C - o(z - y_S) - l(y_C + y'_C)`,
/// `coin_S = c*_S + o(z - y_S) - l(y_S + y'_S)`,
/// `coin_R = l(y_C + y'_C + y_S + y'_S)`.
pub fn arbiter_variant_distribution(c: &ContractState, y: &Counters, cp: &CpStatement) -> Result<Distribution, ProtocolError> {
    let arbiter = c
        .params
        .arbiter
        .clone()
        .ok_or_else(|| ProtocolError::Config("contract has no arbiter".into()))?;
    check_bounds(y, cp.z)?;
    let (o, l) = (cp.o as i128, cp.l as i128);
    let paid = o * (cp.z as i128 - y.y_s as i128);
    let coin_c = c.deposited_client as i128 - paid - l * (y.y_c + y.y_c_prime) as i128;
    let coin_s = c.deposited_server as i128 + paid - l * (y.y_s + y.y_s_prime) as i128;
    let coin_r = l * y.total() as i128;
    Ok(vec![
        (c.params.client.clone(), to_coin(coin_c)?),
        (c.params.server.clone(), to_coin(coin_s)?),
        (arbiter, to_coin(coin_r)?),
    ])
}

/// `coin_C = c*_C - o(z - y_S) + l(y_S - y_C)`,
/// `coin_S = c*_S + o(z - y_S) + l(y_C - y_S)`.
pub fn arbiterless_variant_distribution(c: &ContractState, y: &Counters, cp: &CpStatement) -> Result<Distribution, ProtocolError> {
    check_bounds(y, cp.z)?;
    let (o, l) = (cp.o as i128, cp.l as i128);
    let paid = o * (cp.z as i128 - y.y_s as i128);
    let shift = l * (y.y_s as i128 - y.y_c as i128);
    let coin_c = c.deposited_client as i128 - paid + shift;
    let coin_s = c.deposited_server as i128 + paid - shift;
    Ok(vec![
        (c.params.client.clone(), to_coin(coin_c)?),
        (c.params.server.clone(), to_coin(coin_s)?),
    ])
}

fn committed(c: &ContractState) -> bool {
    c.a_flag == Some(true) && c.deposited_server >= c.params.p_server
}

fn opened_cp(ledger: &Ledger, c: &ContractState, opening: &Opening) -> Result<CpStatement, ProtocolError> {
    if !sap_verify_recorded(ledger, c.params.sap_cp, opening) {
        return Err(ProtocolError::BadOpening);
    }
    let cp = CpStatement::decode(&opening.statement)?;
    if cp.z != c.params.z {
        return Err(ProtocolError::BadOpening);
    }
    Ok(cp)
}

fn pay(
    ledger: &mut Ledger,
    caller: &Address,
    contract: ContractId,
    opening: &Opening,
    dist: fn(&ContractState, &Counters, &CpStatement) -> Result<Distribution, ProtocolError>,
) -> Result<Distribution, ProtocolError> {
    let c = ledger.contract(contract)?;
    if !committed(c) {
        return Err(ProtocolError::RefundPath);
    }
    let cp = opened_cp(ledger, c, opening)?;
    let d = dist(c, &c.counters, &cp)?;
    ledger.execute_payout(caller, contract, &d)?;
    Ok(d)
}

/// Final transfer at `L` for the arbiter variant.
pub fn payout_arbiter_variant(
    ledger: &mut Ledger,
    caller: &Address,
    contract: ContractId,
    opening_cp: &Opening,
) -> Result<Distribution, ProtocolError> {
    pay(ledger, caller, contract, opening_cp, arbiter_variant_distribution)
}

/// Final transfer at `L` for the contract-run variant.
pub fn payout_arbiterless_variant(
    ledger: &mut Ledger,
    caller: &Address,
    contract: ContractId,
    opening_cp: &Opening,
) -> Result<Distribution, ProtocolError> {
    pay(ledger, caller, contract, opening_cp, arbiterless_variant_distribution)
}

/// Returns both deposits at `T2` when the server declined or under-deposited.
pub fn refund(ledger: &mut Ledger, caller: &Address, contract: ContractId) -> Result<Distribution, ProtocolError> {
    let c = ledger.contract(contract)?;
    if committed(c) {
        return Err(ProtocolError::NotRefundable);
    }
    let d = vec![
        (c.params.client.clone(), c.deposited_client),
        (c.params.server.clone(), c.deposited_server),
    ];
    ledger.execute_payout(caller, contract, &d)?;
    Ok(d)
}
