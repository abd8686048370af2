//! The simulated blockchain: one ledger plus the state of the four contracts.
//!
//! Every contract call takes the caller's address explicitly, reads the
//! ledger clock, and either applies in full or returns an error without
//! touching state. Calls are applied one at a time in submission order.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::c_govt::CGovtState;
use crate::contracts::c_vc::{CVcState, VialState};
use crate::contracts::c_vf::CVfState;
use crate::contracts::vc_govt::VcGovtState;
use crate::crypto::PublicKey;
use crate::ledger::{Amount, Ledger, LedgerError, PartyAddress, Tick};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContractError {
    #[error("unauthorized: {0}")]
    Unauthorized(&'static str),
    #[error("guard failed: {0}")]
    GuardFailed(&'static str),
    #[error("window expired")]
    WindowExpired,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl ContractError {
    /// Short kind name used in transcripts and scenario expectations.
    pub fn kind(&self) -> &'static str {
        match self {
            ContractError::Unauthorized(_) => "Unauthorized",
            ContractError::GuardFailed(_) => "GuardFailed",
            ContractError::WindowExpired => "WindowExpired",
            ContractError::Ledger(LedgerError::InsufficientFunds { .. }) => "InsufficientFunds",
            ContractError::Ledger(LedgerError::EscrowNotFound(_)) => "EscrowNotFound",
            ContractError::Ledger(LedgerError::InvalidArgument(_)) => "InvalidArgument",
        }
    }
}

pub type ContractResult<T> = Result<T, ContractError>;

pub(crate) fn ensure(cond: bool, reason: &'static str) -> ContractResult<()> {
    if cond {
        Ok(())
    } else {
        Err(ContractError::GuardFailed(reason))
    }
}

macro_rules! id_newtype {
    ($name:ident, $prefix:literal) => {
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_newtype!(VcId, "vc#");
id_newtype!(TokenId, "token#");
id_newtype!(StockId, "stock#");

/// The four protocol roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Govt,
    Vc,
    Citizen,
    Verifier,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Govt => "govt",
            Role::Vc => "vc",
            Role::Citizen => "citizen",
            Role::Verifier => "verifier",
        })
    }
}

/// How a protocol instance ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Closure {
    Completed,
    /// A party answered `false` at a decision point.
    Declined { by: Role },
    /// A party let its step window lapse and the other side exited.
    TimedOut { silent: Role },
    /// A dispute was decided on-chain against `faulty`.
    Adjudicated { faulty: Role },
    /// Negative acknowledgement of a vaccination; escrows stay locked.
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timeouts {
    pub vc_govt: Tick,
    pub c_govt: Tick,
    pub c_vc: Tick,
    pub c_vf: Tick,
    /// Window for revealing a Merkle proof after a dissent.
    pub dispute: Tick,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts { vc_govt: 100, c_govt: 100, c_vc: 100, c_vf: 100, dispute: 50 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Deposits {
    pub injection: Amount,
    pub vp: Amount,
    pub verification: Amount,
}

impl Default for Deposits {
    fn default() -> Self {
        Deposits { injection: 100, vp: 100, verification: 100 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub timeouts: Timeouts,
    pub deposits: Deposits,
    pub service_charge_per_vial: Amount,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { timeouts: Timeouts::default(), deposits: Deposits::default(), service_charge_per_vial: 10 }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        let t = &self.timeouts;
        if [t.vc_govt, t.c_govt, t.c_vc, t.c_vf, t.dispute].contains(&0) {
            return Err("timeouts must be positive");
        }
        let d = &self.deposits;
        if [d.injection, d.vp, d.verification, self.service_charge_per_vial].contains(&0) {
            return Err("deposits and service charge must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Chain {
    pub(crate) ledger: Ledger,
    pub(crate) config: ChainConfig,
    pub(crate) govt: PartyAddress,
    pub(crate) govt_key: PublicKey,
    pub(crate) vc_govt: VcGovtState,
    pub(crate) c_govt: CGovtState,
    pub(crate) c_vc: CVcState,
    pub(crate) c_vf: CVfState,
}

impl Chain {
    /// `govt_key` is the government's signature verification key; its
    /// address is derived from it.
    pub fn new(config: ChainConfig, govt_key: PublicKey, ledger: Ledger) -> Self {
        Chain {
            ledger,
            config,
            govt: PartyAddress::from_public_key(&govt_key),
            govt_key,
            vc_govt: VcGovtState::default(),
            c_govt: CGovtState::default(),
            c_vc: CVcState::default(),
            c_vf: CVfState::default(),
        }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn govt(&self) -> PartyAddress {
        self.govt
    }

    pub fn govt_key(&self) -> &PublicKey {
        &self.govt_key
    }

    pub fn now(&self) -> Tick {
        self.ledger.now()
    }

    pub fn advance_time(&mut self, delta: Tick) -> Result<Tick, LedgerError> {
        self.ledger.advance_time(delta)
    }

    pub fn balance(&self, party: &PartyAddress) -> Amount {
        self.ledger.balance(party)
    }

    /// Full on-chain state as JSON, for inspection and audits.
    pub fn state_dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain state serializes")
    }

    pub(crate) fn require_govt(&self, caller: PartyAddress) -> ContractResult<()> {
        if caller == self.govt {
            Ok(())
        } else {
            Err(ContractError::Unauthorized("caller is not the government"))
        }
    }

    /// `now - since <= window`, else [`ContractError::WindowExpired`].
    pub(crate) fn within(&self, since: Tick, window: Tick) -> ContractResult<()> {
        if self.now().saturating_sub(since) <= window {
            Ok(())
        } else {
            Err(ContractError::WindowExpired)
        }
    }

    /// Exit operations need the window to have lapsed.
    pub(crate) fn require_expired(&self, since: Tick, window: Tick) -> ContractResult<()> {
        ensure(self.now().saturating_sub(since) > window, "step window has not expired yet")
    }

    pub(crate) fn emit<T: Serialize>(&mut self, caller: PartyAddress, op: &str, payload: &T) {
        let bytes = serde_json::to_vec(payload).expect("event payload serializes");
        self.ledger.record(caller, op, &bytes);
    }
}

/// Per-VC figures in a [`Stats`] report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VcStats {
    pub vc_id: VcId,
    pub vials_in_stock: u64,
    pub doses_administered: u64,
    pub money_earned: Amount,
}

/// Global vaccination statistics readable from chain state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub tokened: u64,
    pub vaccinated: u64,
    pub vp_issued: u64,
    pub verifications: u64,
    pub verifications_passed: u64,
    pub vaccinated_fraction: f64,
    pub vcs: Vec<VcStats>,
}

impl Chain {
    /// Descriptions of every protocol instance still open.
    pub fn open_instances(&self) -> Vec<String> {
        let mut out = self.vc_govt.open_instances();
        out.extend(self.c_govt.open_instances());
        out.extend(self.c_vc.open_instances());
        out.extend(self.c_vf.open_instances());
        out
    }

    /// Checks every state invariant and returns a description of each one
    /// that does not hold.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, what: &str| {
            if !ok {
                v.push(what.to_string());
            }
        };
        check(self.ledger.is_conserved(), "funds not conserved");
        check(self.ledger.events().windows(2).all(|w| w[0].time <= w[1].time), "event times decrease");
        check(self.vc_govt.stamps_ok(), "registration or refill timestamps out of order");
        check(self.c_govt.stamps_ok(), "token or passport timestamps out of order");
        check(self.c_vc.stamps_ok(), "injection timestamps out of order");
        check(self.c_vf.stamps_ok(), "verification timestamps out of order");
        check(self.vc_govt.stock_accounting_ok(), "stock accounting mismatch");
        let reserved = self.c_vc.reserved_per_vc();
        check(
            self.vc_govt.vcs().all(|vc| reserved.get(&vc.vc_id).copied().unwrap_or(0) == vc.vials_reserved),
            "reserved vial count mismatch",
        );
        check(self.c_govt.vp_status_consistent(), "passport status without vaccination or content id");
        check(
            self.c_govt.closed_instances_settled() && self.c_vc.closed_instances_settled() && self.c_vf.closed_instances_settled(),
            "closed instance still holds escrow",
        );
        let referenced: std::collections::BTreeSet<_> = self
            .vc_govt
            .escrow_refs()
            .chain(self.c_govt.escrow_refs())
            .chain(self.c_vc.escrow_refs())
            .chain(self.c_vf.escrow_refs())
            .collect();
        let live: std::collections::BTreeSet<_> = self.ledger.escrows().keys().copied().collect();
        check(referenced == live, "escrow set differs from contract references");
        v
    }

    pub fn stats(&self) -> Stats {
        let citizens: Vec<_> = self.c_govt.citizens().collect();
        let tokened = citizens.len() as u64;
        let vaccinated = citizens.iter().filter(|c| c.vaccination_status).count() as u64;
        let history = self.c_vf.history.values().flatten();
        let (verifications, verifications_passed) = history.fold((0, 0), |(n, ok), r| (n + 1, ok + u64::from(r.result)));
        Stats {
            tokened,
            vaccinated,
            vp_issued: citizens.iter().filter(|c| c.vp_status).count() as u64,
            verifications,
            verifications_passed,
            vaccinated_fraction: if tokened == 0 { 0.0 } else { vaccinated as f64 / tokened as f64 },
            vcs: self
                .vc_govt
                .vcs()
                .map(|vc| VcStats {
                    vc_id: vc.vc_id,
                    vials_in_stock: vc.vials_in_stock,
                    doses_administered: vc.doses_administered,
                    money_earned: vc.money_earned,
                })
                .collect(),
        }
    }
}

/// Allowed vial transitions between two consecutive states. `Used` is
/// absorbing and only reachable from `Reserved`; a reservation may be
/// released back to `Unused` when its injection aborts.
pub fn vial_transition_ok(from: VialState, to: VialState) -> bool {
    use VialState::*;
    matches!((from, to), (a, b) if a == b)
        || matches!((from, to), (Unused, Reserved) | (Reserved, Used) | (Reserved, Unused))
}

/// Checks that the set entries of `stamps` form a prefix and never decrease.
pub(crate) fn stamps_well_ordered(stamps: &[Option<Tick>]) -> bool {
    let set: Vec<Tick> = stamps.iter().map_while(|t| *t).collect();
    let prefix = stamps[set.len()..].iter().all(Option::is_none);
    prefix && set.windows(2).all(|w| w[0] <= w[1])
}
