//! Deterministic simulated chain state: a logical clock, integer balances,
//! escrow vaults and an append-only event log.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::crypto::{hash, CryptoError, Digest, PublicKey};

pub type Tick = u64;
pub type Amount = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("insufficient funds: balance {balance}, needed {needed}")]
    InsufficientFunds { balance: Amount, needed: Amount },
    #[error("escrow {0} not found or already released")]
    EscrowNotFound(EscrowId),
}

/// 32-byte account identifier: Keccak-256 of the party's signing key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PartyAddress(pub [u8; 32]);

impl PartyAddress {
    pub fn from_public_key(pk: &PublicKey) -> Self {
        PartyAddress(hash(&pk.to_bytes()).0)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Display for PartyAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for PartyAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self.short())
    }
}

impl FromStr for PartyAddress {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s).map(|d| PartyAddress(d.0))
    }
}

impl Serialize for PartyAddress {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PartyAddress {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EscrowId(pub u64);

impl fmt::Display for EscrowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "escrow#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Escrow {
    pub holder: PartyAddress,
    pub amount: Amount,
    pub purpose: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub time: Tick,
    pub actor: PartyAddress,
    pub op: String,
    pub payload_digest: Digest,
}

impl Event {
    /// `time actor op digest`, space separated.
    pub fn to_line(&self) -> String {
        format!("{} {} {} {}", self.time, self.actor, self.op, self.payload_digest)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Ledger {
    now: Tick,
    balances: BTreeMap<PartyAddress, Amount>,
    escrows: BTreeMap<EscrowId, Escrow>,
    next_escrow: u64,
    events: Vec<Event>,
    genesis_total: u128,
}

impl Ledger {
    /// Endows each party once. Later supply changes are impossible.
    pub fn genesis<I>(endowments: I) -> Self
    where
        I: IntoIterator<Item = (PartyAddress, Amount)>,
    {
        let mut balances = BTreeMap::new();
        for (party, amount) in endowments {
            *balances.entry(party).or_insert(0) += amount;
        }
        let genesis_total = balances.values().map(|&a| a as u128).sum();
        Ledger { balances, genesis_total, ..Default::default() }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn advance_time(&mut self, delta: Tick) -> Result<Tick, LedgerError> {
        if delta == 0 {
            return Err(LedgerError::InvalidArgument("time delta must be positive"));
        }
        self.now = self
            .now
            .checked_add(delta)
            .ok_or(LedgerError::InvalidArgument("clock overflow"))?;
        Ok(self.now)
    }

    pub fn balance(&self, party: &PartyAddress) -> Amount {
        self.balances.get(party).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<PartyAddress, Amount> {
        &self.balances
    }

    pub fn escrow(&self, id: EscrowId) -> Option<&Escrow> {
        self.escrows.get(&id)
    }

    pub fn escrows(&self) -> &BTreeMap<EscrowId, Escrow> {
        &self.escrows
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn genesis_total(&self) -> u128 {
        self.genesis_total
    }

    /// Sum of balances and unreleased escrows.
    pub fn total_supply(&self) -> u128 {
        let balances: u128 = self.balances.values().map(|&a| a as u128).sum();
        let escrowed: u128 = self.escrows.values().map(|e| e.amount as u128).sum();
        balances + escrowed
    }

    pub fn is_conserved(&self) -> bool {
        self.total_supply() == self.genesis_total
    }

    pub fn lock_funds(&mut self, party: PartyAddress, amount: Amount, purpose: &str) -> Result<EscrowId, LedgerError> {
        if amount == 0 {
            return Err(LedgerError::InvalidArgument("escrow amount must be positive"));
        }
        self.debit(&party, amount)?;
        let id = EscrowId(self.next_escrow);
        self.next_escrow += 1;
        self.escrows.insert(id, Escrow { holder: party, amount, purpose: purpose.to_string() });
        self.record(party, "lock_funds", format!("{id} {amount} {purpose}").as_bytes());
        Ok(id)
    }

    pub fn release_funds(&mut self, id: EscrowId, to: PartyAddress) -> Result<Amount, LedgerError> {
        let escrow = self.escrows.remove(&id).ok_or(LedgerError::EscrowNotFound(id))?;
        *self.balances.entry(to).or_insert(0) += escrow.amount;
        self.record(escrow.holder, "release_funds", format!("{id} {} {to}", escrow.amount).as_bytes());
        Ok(escrow.amount)
    }

    pub fn transfer(&mut self, from: PartyAddress, to: PartyAddress, amount: Amount) -> Result<(), LedgerError> {
        self.debit(&from, amount)?;
        *self.balances.entry(to).or_insert(0) += amount;
        self.record(from, "transfer", format!("{to} {amount}").as_bytes());
        Ok(())
    }

    fn debit(&mut self, party: &PartyAddress, amount: Amount) -> Result<(), LedgerError> {
        let balance = self.balance(party);
        if balance < amount {
            return Err(LedgerError::InsufficientFunds { balance, needed: amount });
        }
        self.balances.insert(*party, balance - amount);
        Ok(())
    }

    /// Appends an event stamped with the current time.
    pub fn record(&mut self, actor: PartyAddress, op: &str, payload: &[u8]) {
        self.events.push(Event { time: self.now, actor, op: op.to_string(), payload_digest: hash(payload) });
    }

    /// One event per line; see [`Event::to_line`].
    pub fn export_events(&self) -> String {
        self.events.iter().map(|e| e.to_line() + "\n").collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(b: u8) -> PartyAddress {
        PartyAddress([b; 32])
    }

    fn ledger() -> Ledger {
        Ledger::genesis([(addr(1), 100), (addr(2), 10)])
    }

    #[test]
    fn clock_advances_additively() {
        let mut l = ledger();
        assert_eq!(l.advance_time(5).unwrap(), 5);
        assert_eq!(l.advance_time(0), Err(LedgerError::InvalidArgument("time delta must be positive")));
        let mut l = ledger();
        l.advance_time(3).unwrap();
        assert_eq!(l.advance_time(4).unwrap(), 7);
    }

    #[test]
    fn lock_and_release_round_trip() {
        let mut l = ledger();
        let id = l.lock_funds(addr(1), 40, "test").unwrap();
        assert_eq!(l.balance(&addr(1)), 60);
        assert_eq!(l.escrow(id).unwrap().amount, 40);
        assert!(l.is_conserved());
        l.release_funds(id, addr(1)).unwrap();
        assert_eq!(l.balance(&addr(1)), 100);
        assert_eq!(l.release_funds(id, addr(1)), Err(LedgerError::EscrowNotFound(id)));
    }

    #[test]
    fn lock_rejects_overdraft_and_zero() {
        let mut l = ledger();
        assert!(matches!(l.lock_funds(addr(2), 40, "x"), Err(LedgerError::InsufficientFunds { .. })));
        assert!(matches!(l.lock_funds(addr(2), 0, "x"), Err(LedgerError::InvalidArgument(_))));
        assert_eq!(l.balance(&addr(2)), 10);
    }

    #[test]
    fn release_to_counterparty_is_a_penalty() {
        let mut l = ledger();
        let id = l.lock_funds(addr(2), 10, "deposit").unwrap();
        l.release_funds(id, addr(1)).unwrap();
        assert_eq!(l.balance(&addr(1)), 110);
        assert_eq!(l.balance(&addr(2)), 0);
        assert!(l.is_conserved());
    }

    #[test]
    fn transfers() {
        let mut l = ledger();
        l.transfer(addr(2), addr(1), 10).unwrap();
        assert_eq!((l.balance(&addr(2)), l.balance(&addr(1))), (0, 110));
        assert!(matches!(l.transfer(addr(2), addr(1), 1), Err(LedgerError::InsufficientFunds { .. })));
        let before = l.events().len();
        l.transfer(addr(1), addr(1), 5).unwrap();
        assert_eq!(l.balance(&addr(1)), 110);
        assert_eq!(l.events().len(), before + 1);
    }

    #[test]
    fn escrow_ids_are_never_reused() {
        let mut l = ledger();
        let a = l.lock_funds(addr(1), 1, "a").unwrap();
        l.release_funds(a, addr(1)).unwrap();
        let b = l.lock_funds(addr(1), 1, "b").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn event_export_is_one_line_per_event() {
        let mut l = ledger();
        l.advance_time(2).unwrap();
        l.lock_funds(addr(1), 1, "a").unwrap();
        let text = l.export_events();
        let line = text.lines().next().unwrap();
        let fields: Vec<_> = line.split(' ').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[0], "2");
        assert_eq!(fields[1], addr(1).to_hex());
        assert_eq!(fields[2], "lock_funds");
        assert_eq!(fields[3].len(), 64);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Op {
            Lock(u8, Amount),
            Release(usize, u8),
            Transfer(u8, u8, Amount),
            Tick(Tick),
        }

        fn op() -> impl Strategy<Value = Op> {
            prop_oneof![
                (0u8..4, 0u64..60).prop_map(|(p, a)| Op::Lock(p, a)),
                (0usize..8, 0u8..4).prop_map(|(i, p)| Op::Release(i, p)),
                (0u8..4, 0u8..4, 0u64..60).prop_map(|(f, t, a)| Op::Transfer(f, t, a)),
                (0u64..4).prop_map(Op::Tick),
            ]
        }

        proptest! {
            #[test]
            fn supply_is_conserved_and_time_is_monotone(ops in proptest::collection::vec(op(), 1..60)) {
                let mut l = Ledger::genesis((0..4).map(|i| (addr(i), 100)));
                let mut ids = Vec::new();
                for op in ops {
                    match op {
                        Op::Lock(p, a) => { if let Ok(id) = l.lock_funds(addr(p), a, "p") { ids.push(id) } }
                        Op::Release(i, p) => { if let Some(id) = ids.get(i) { let _ = l.release_funds(*id, addr(p)); } }
                        Op::Transfer(f, t, a) => { let _ = l.transfer(addr(f), addr(t), a); }
                        Op::Tick(d) => { let _ = l.advance_time(d); }
                    }
                    prop_assert!(l.is_conserved());
                    prop_assert!(l.escrows().values().all(|e| e.amount > 0));
                }
                prop_assert!(l.events().windows(2).all(|w| w[0].time <= w[1].time));
            }
        }
    }
}
