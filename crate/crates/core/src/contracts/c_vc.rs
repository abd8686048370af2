//! The injection protocol between a citizen and a vaccination center.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chain::{ensure, stamps_well_ordered, Chain, Closure, ContractError, ContractResult, Role, StockId, TokenId, VcId};
use crate::crypto::{hash, merkle_verify, Digest, MerkleProof};
use crate::ledger::{Amount, EscrowId, LedgerError, PartyAddress, Tick};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VialState {
    #[default]
    Unused,
    Reserved,
    Used,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectingProtocol {
    pub protocol_id: u64,
    pub under_process: bool,
    pub token_id: TokenId,
    pub vc_id: VcId,
    pub citizen: PartyAddress,
    pub stock_id: Option<StockId>,
    pub commit_mt_proof: Option<Digest>,
    pub commit_vid: Option<Digest>,
    pub consent1: bool,
    pub consent2: bool,
    pub consent3: bool,
    pub acknowledgement: bool,
    pub t_protocol_begins: Option<Tick>,
    pub t_lock_money_by_vc: Option<Tick>,
    pub t_lock_money_by_c: Option<Tick>,
    pub t_commit_mt_proof: Option<Tick>,
    pub t_consent1: Option<Tick>,
    pub t_commit_vid: Option<Tick>,
    pub t_consent2: Option<Tick>,
    pub t_consent3: Option<Tick>,
    pub t_vaccination: Option<Tick>,
    pub t_acknowledgement: Option<Tick>,
    pub t_money_received_by_c: Option<Tick>,
    pub t_money_received_by_vc: Option<Tick>,
    pub vc_escrow: Option<EscrowId>,
    pub c_escrow: Option<EscrowId>,
    pub closure: Option<Closure>,
}

impl InjectingProtocol {
    pub fn stamps(&self) -> [Option<Tick>; 10] {
        [
            self.t_protocol_begins,
            self.t_lock_money_by_vc,
            self.t_lock_money_by_c,
            self.t_commit_mt_proof,
            self.t_consent1,
            self.t_commit_vid,
            self.t_consent2,
            self.t_consent3,
            self.t_vaccination,
            self.t_acknowledgement,
        ]
    }

    fn consistent(&self) -> bool {
        let payouts_ok = [self.t_money_received_by_c, self.t_money_received_by_vc]
            .into_iter()
            .flatten()
            .all(|t| self.t_protocol_begins.is_some_and(|s| s <= t));
        let vaccination_ok = self.t_vaccination.is_none() || (self.consent3 && self.t_consent3 <= self.t_vaccination);
        let consents_ok = (!self.consent3 || self.consent2) && (!self.consent2 || self.consent1);
        stamps_well_ordered(&self.stamps()) && payouts_ok && vaccination_ok && consents_ok
    }
}

/// Outcome of an injection dispute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub faulty: Role,
    pub commitment_matches: bool,
    pub leaf_matches: bool,
    pub reaches_root: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CVcState {
    pub(crate) protocols: BTreeMap<u64, InjectingProtocol>,
    pub(crate) current: BTreeMap<PartyAddress, u64>,
    pub(crate) latest_by_token: BTreeMap<TokenId, u64>,
    pub(crate) vial_state: BTreeMap<Digest, VialState>,
    next_protocol_id: u64,
}

impl CVcState {
    pub fn protocol(&self, id: u64) -> Option<&InjectingProtocol> {
        self.protocols.get(&id)
    }

    pub fn protocols(&self) -> impl Iterator<Item = &InjectingProtocol> {
        self.protocols.values()
    }

    pub fn current(&self, c_addr: &PartyAddress) -> Option<&InjectingProtocol> {
        self.current.get(c_addr).and_then(|id| self.protocols.get(id))
    }

    pub fn latest_for_token(&self, token_id: TokenId) -> Option<&InjectingProtocol> {
        self.latest_by_token.get(&token_id).and_then(|id| self.protocols.get(id))
    }

    /// State of a vial keyed by its id digest; never-seen vials are unused.
    pub fn vial_state(&self, commit_vid: &Digest) -> VialState {
        self.vial_state.get(commit_vid).copied().unwrap_or_default()
    }

    pub fn vial_states(&self) -> &BTreeMap<Digest, VialState> {
        &self.vial_state
    }

    pub(crate) fn escrow_refs(&self) -> impl Iterator<Item = EscrowId> + '_ {
        self.protocols.values().flat_map(|p| [p.vc_escrow, p.c_escrow]).flatten()
    }

    pub(crate) fn open_instances(&self) -> Vec<String> {
        self.protocols
            .values()
            .filter(|p| p.under_process)
            .map(|p| format!("injection {} of {}", p.protocol_id, p.citizen.short()))
            .collect()
    }

    /// Closed instances hold no escrow, except frozen ones.
    pub(crate) fn closed_instances_settled(&self) -> bool {
        self.protocols
            .values()
            .filter(|p| !p.under_process && p.closure != Some(Closure::Frozen))
            .all(|p| p.vc_escrow.is_none() && p.c_escrow.is_none())
    }

    pub(crate) fn stamps_ok(&self) -> bool {
        self.protocols.values().all(InjectingProtocol::consistent)
    }

    pub(crate) fn reserved_per_vc(&self) -> BTreeMap<VcId, u64> {
        let mut out = BTreeMap::new();
        for p in self.protocols.values() {
            let holds = p.commit_vid.is_some_and(|d| self.vial_state(&d) == VialState::Reserved);
            if holds && (p.under_process || p.closure == Some(Closure::Frozen)) {
                *out.entry(p.vc_id).or_default() += 1;
            }
        }
        out
    }
}

/// How escrows are released when an instance ends early.
#[derive(Clone, Copy)]
enum Payout {
    EachOwn,
    AllTo(Role),
}

impl Chain {
    pub fn c_vc(&self) -> &CVcState {
        &self.c_vc
    }

    /// `c_addr` holds a token and is not vaccinated.
    fn eligible_citizen(&self, c_addr: &PartyAddress) -> ContractResult<TokenId> {
        let record = self.c_govt.citizen_by_addr(c_addr).ok_or(ContractError::GuardFailed("citizen holds no token"))?;
        ensure(!record.vaccination_status, "citizen already vaccinated")?;
        Ok(record.token_id)
    }

    /// The open instance of `c_addr`, checked against the expected VC.
    fn open_injection(&self, c_addr: &PartyAddress, vc_id: VcId) -> ContractResult<&InjectingProtocol> {
        let token_id = self.eligible_citizen(c_addr)?;
        let p = match self.c_vc.current(c_addr) {
            Some(p) if p.under_process => p,
            _ => return Err(ContractError::GuardFailed("no injection protocol under process")),
        };
        ensure(p.vc_id == vc_id, "protocol belongs to another VC")?;
        ensure(p.token_id == token_id, "protocol belongs to another token")?;
        Ok(p)
    }

    /// Caller-is-VC variant of [`Chain::open_injection`].
    fn vc_open_injection(&self, caller: PartyAddress, c_addr: &PartyAddress) -> ContractResult<(VcId, &InjectingProtocol)> {
        let vc_id = self.require_vc(caller)?;
        Ok((vc_id, self.open_injection(c_addr, vc_id)?))
    }

    /// Caller-is-citizen variant of [`Chain::open_injection`].
    fn c_open_injection(&self, caller: PartyAddress, vc_id: VcId) -> ContractResult<&InjectingProtocol> {
        self.require_citizen(caller)?;
        ensure(self.vc_govt.vc(vc_id).is_some(), "unknown VC id")?;
        self.open_injection(&caller, vc_id)
    }

    fn protocol_mut(&mut self, c_addr: &PartyAddress) -> &mut InjectingProtocol {
        let id = self.c_vc.current[c_addr];
        self.c_vc.protocols.get_mut(&id).expect("current protocol exists")
    }

    fn lock_deposit(&mut self, party: PartyAddress, locked: Amount, purpose: &str) -> ContractResult<EscrowId> {
        ensure(locked == self.config.deposits.injection, "incorrect amount locked")?;
        let balance = self.ledger.balance(&party);
        if balance < locked {
            return Err(LedgerError::InsufficientFunds { balance, needed: locked }.into());
        }
        Ok(self.ledger.lock_funds(party, locked, purpose)?)
    }

    /// Ends the open instance of `c_addr`: releases escrows per `payout`,
    /// returns a reserved vial to the pool, and records the closure.
    fn close_injection(&mut self, c_addr: PartyAddress, payout: Payout, closure: Closure) -> ContractResult<()> {
        let now = self.now();
        let p = self.protocol_mut(&c_addr);
        let (vc_escrow, c_escrow, vc_id, commit_vid) = (p.vc_escrow.take(), p.c_escrow.take(), p.vc_id, p.commit_vid);
        p.under_process = false;
        p.closure = Some(closure);
        let vc_addr = self.vc_govt.vc(vc_id).expect("registered").address;
        let (vc_to, c_to) = match payout {
            Payout::EachOwn => (vc_addr, c_addr),
            Payout::AllTo(Role::Vc) => (vc_addr, vc_addr),
            Payout::AllTo(_) => (c_addr, c_addr),
        };
        let p = self.protocol_mut(&c_addr);
        let recipients = [vc_escrow.map(|_| vc_to), c_escrow.map(|_| c_to)];
        if recipients.contains(&Some(c_addr)) {
            p.t_money_received_by_c = Some(now);
        }
        if recipients.contains(&Some(vc_addr)) {
            p.t_money_received_by_vc = Some(now);
        }
        if let Some(id) = vc_escrow {
            self.ledger.release_funds(id, vc_to)?;
        }
        if let Some(id) = c_escrow {
            self.ledger.release_funds(id, c_to)?;
        }
        if let Some(d) = commit_vid {
            if self.c_vc.vial_state(&d) == VialState::Reserved {
                self.c_vc.vial_state.insert(d, VialState::Unused);
                self.unreserve_vial(vc_id);
            }
        }
        Ok(())
    }

    pub fn begin_protocol(&mut self, caller: PartyAddress, vc_id: VcId) -> ContractResult<u64> {
        self.require_citizen(caller)?;
        ensure(self.vc_govt.vc(vc_id).is_some(), "unknown VC id")?;
        let token_id = self.eligible_citizen(&caller)?;
        ensure(!self.c_vc.current(&caller).is_some_and(|p| p.under_process), "injection protocol already under process")?;
        self.c_vc.next_protocol_id += 1;
        let id = self.c_vc.next_protocol_id;
        let now = self.now();
        self.c_vc.protocols.insert(
            id,
            InjectingProtocol {
                protocol_id: id,
                under_process: true,
                token_id,
                vc_id,
                citizen: caller,
                stock_id: None,
                commit_mt_proof: None,
                commit_vid: None,
                consent1: false,
                consent2: false,
                consent3: false,
                acknowledgement: false,
                t_protocol_begins: Some(now),
                t_lock_money_by_vc: None,
                t_lock_money_by_c: None,
                t_commit_mt_proof: None,
                t_consent1: None,
                t_commit_vid: None,
                t_consent2: None,
                t_consent3: None,
                t_vaccination: None,
                t_acknowledgement: None,
                t_money_received_by_c: None,
                t_money_received_by_vc: None,
                vc_escrow: None,
                c_escrow: None,
                closure: None,
            },
        );
        self.c_vc.current.insert(caller, id);
        self.c_vc.latest_by_token.insert(token_id, id);
        self.emit(caller, "begin_protocol", &json!({ "protocol_id": id, "vc_id": vc_id, "token_id": token_id }));
        Ok(id)
    }

    pub fn lock_money_by_vc(&mut self, caller: PartyAddress, c_addr: PartyAddress, locked: Amount) -> ContractResult<()> {
        let (_, p) = self.vc_open_injection(caller, &c_addr)?;
        let since = p.t_protocol_begins.ok_or(ContractError::GuardFailed("protocol not begun"))?;
        ensure(p.t_lock_money_by_vc.is_none(), "VC already locked")?;
        self.within(since, self.config.timeouts.c_vc)?;
        let escrow = self.lock_deposit(caller, locked, "injection-vc")?;
        let now = self.now();
        let p = self.protocol_mut(&c_addr);
        p.vc_escrow = Some(escrow);
        p.t_lock_money_by_vc = Some(now);
        let id = p.protocol_id;
        self.emit(caller, "lock_money_by_vc", &json!({ "protocol_id": id, "locked": locked }));
        Ok(())
    }

    pub fn lock_money_by_c(&mut self, caller: PartyAddress, vc_id: VcId, locked: Amount) -> ContractResult<()> {
        let p = self.c_open_injection(caller, vc_id)?;
        let since = p.t_lock_money_by_vc.ok_or(ContractError::GuardFailed("VC has not locked yet"))?;
        ensure(p.t_lock_money_by_c.is_none(), "citizen already locked")?;
        self.within(since, self.config.timeouts.c_vc)?;
        let escrow = self.lock_deposit(caller, locked, "injection-citizen")?;
        let now = self.now();
        let p = self.protocol_mut(&caller);
        p.c_escrow = Some(escrow);
        p.t_lock_money_by_c = Some(now);
        let id = p.protocol_id;
        self.emit(caller, "lock_money_by_c", &json!({ "protocol_id": id, "locked": locked }));
        Ok(())
    }

    pub fn commit_mt_proof(&mut self, caller: PartyAddress, c_addr: PartyAddress, commit_mt_proof: Digest) -> ContractResult<()> {
        let (vc_id, p) = self.vc_open_injection(caller, &c_addr)?;
        let since = p.t_lock_money_by_c.ok_or(ContractError::GuardFailed("citizen has not locked yet"))?;
        ensure(p.t_commit_mt_proof.is_none(), "proof already committed")?;
        self.within(since, self.config.timeouts.c_vc)?;
        let vc = self.vc_govt.vc(vc_id).expect("registered");
        let stock_id = vc.current_stock_id.ok_or(ContractError::GuardFailed("VC has no vaccine stock"))?;
        ensure(vc.vials_available() > 0, "VC has no unreserved vials")?;
        let now = self.now();
        let p = self.protocol_mut(&c_addr);
        p.commit_mt_proof = Some(commit_mt_proof);
        p.stock_id = Some(stock_id);
        p.t_commit_mt_proof = Some(now);
        let id = p.protocol_id;
        self.emit(caller, "commit_mt_proof", &json!({ "protocol_id": id, "commit_mt_proof": commit_mt_proof }));
        Ok(())
    }

    pub fn provide_consent1(&mut self, caller: PartyAddress, vc_id: VcId, consent1: bool) -> ContractResult<()> {
        let p = self.c_open_injection(caller, vc_id)?;
        let since = p.t_commit_mt_proof.ok_or(ContractError::GuardFailed("proof not committed yet"))?;
        ensure(p.t_consent1.is_none(), "consent1 already given")?;
        self.within(since, self.config.timeouts.c_vc)?;
        let now = self.now();
        let p = self.protocol_mut(&caller);
        p.consent1 = consent1;
        p.t_consent1 = Some(now);
        let id = p.protocol_id;
        if !consent1 {
            self.close_injection(caller, Payout::EachOwn, Closure::Declined { by: Role::Citizen })?;
        }
        self.emit(caller, "provide_consent1", &json!({ "protocol_id": id, "consent1": consent1 }));
        Ok(())
    }

    pub fn commit_vial_id(&mut self, caller: PartyAddress, c_addr: PartyAddress, commit_vid: Digest) -> ContractResult<()> {
        let (vc_id, p) = self.vc_open_injection(caller, &c_addr)?;
        let since = p.t_consent1.ok_or(ContractError::GuardFailed("consent1 not given"))?;
        ensure(p.consent1, "consent1 was negative")?;
        ensure(p.t_commit_vid.is_none(), "vial already committed")?;
        self.within(since, self.config.timeouts.c_vc)?;
        match self.c_vc.vial_state(&commit_vid) {
            VialState::Unused => {}
            VialState::Reserved => return Err(ContractError::GuardFailed("vial is reserved by another injection")),
            VialState::Used => return Err(ContractError::GuardFailed("vial already used")),
        }
        ensure(self.vc_govt.vc(vc_id).expect("registered").vials_available() > 0, "VC has no unreserved vials")?;
        self.c_vc.vial_state.insert(commit_vid, VialState::Reserved);
        self.reserve_vial(vc_id);
        let now = self.now();
        let p = self.protocol_mut(&c_addr);
        p.commit_vid = Some(commit_vid);
        p.t_commit_vid = Some(now);
        let id = p.protocol_id;
        self.emit(caller, "commit_vial_id", &json!({ "protocol_id": id, "commit_vid": commit_vid }));
        Ok(())
    }

    pub fn provide_consent2(&mut self, caller: PartyAddress, vc_id: VcId, consent2: bool) -> ContractResult<()> {
        let p = self.c_open_injection(caller, vc_id)?;
        let since = p.t_commit_vid.ok_or(ContractError::GuardFailed("vial not committed yet"))?;
        ensure(p.t_consent2.is_none(), "consent2 already given")?;
        self.within(since, self.config.timeouts.c_vc)?;
        let now = self.now();
        let p = self.protocol_mut(&caller);
        p.consent2 = consent2;
        p.t_consent2 = Some(now);
        let id = p.protocol_id;
        if !consent2 {
            self.close_injection(caller, Payout::EachOwn, Closure::Declined { by: Role::Citizen })?;
        }
        self.emit(caller, "provide_consent2", &json!({ "protocol_id": id, "consent2": consent2 }));
        Ok(())
    }

    /// A `false` consent3 opens a dispute: the VC must reveal its proof via
    /// [`Chain::adjudicate_dispute`] within the dispute window.
    pub fn provide_consent3(&mut self, caller: PartyAddress, vc_id: VcId, consent3: bool) -> ContractResult<()> {
        let p = self.c_open_injection(caller, vc_id)?;
        let since = p.t_consent2.ok_or(ContractError::GuardFailed("consent2 not given"))?;
        ensure(p.consent2, "consent2 was negative")?;
        ensure(p.t_consent3.is_none(), "consent3 already given")?;
        self.within(since, self.config.timeouts.c_vc)?;
        let now = self.now();
        let p = self.protocol_mut(&caller);
        p.consent3 = consent3;
        p.t_consent3 = Some(now);
        let id = p.protocol_id;
        self.emit(caller, "provide_consent3", &json!({ "protocol_id": id, "consent3": consent3 }));
        Ok(())
    }

    /// The VC reveals the proof it committed to. If it matches both
    /// commitments and folds to the stock root the citizen dissented
    /// wrongly and loses its deposit to the VC; otherwise the VC loses its
    /// deposit to the citizen. The vial returns to the pool either way.
    pub fn adjudicate_dispute(&mut self, caller: PartyAddress, c_addr: PartyAddress, revealed: &MerkleProof) -> ContractResult<Verdict> {
        let (_, p) = self.vc_open_injection(caller, &c_addr)?;
        let since = p.t_consent3.ok_or(ContractError::GuardFailed("consent3 not given"))?;
        ensure(!p.consent3, "no dispute open")?;
        self.within(since, self.config.timeouts.dispute)?;
        let root = p.stock_id.and_then(|s| self.vc_govt.stock(s)).map(|s| s.stock_mr);
        let commitment_matches = p.commit_mt_proof == Some(revealed.commitment());
        let leaf_matches = p.commit_vid == Some(hash(&revealed.leaf));
        let reaches_root = root.is_some_and(|r| merkle_verify(revealed, &r));
        let faulty = if commitment_matches && leaf_matches && reaches_root { Role::Citizen } else { Role::Vc };
        let winner = if faulty == Role::Citizen { Role::Vc } else { Role::Citizen };
        let id = p.protocol_id;
        self.close_injection(c_addr, Payout::AllTo(winner), Closure::Adjudicated { faulty })?;
        let verdict = Verdict { faulty, commitment_matches, leaf_matches, reaches_root };
        self.emit(caller, "adjudicate_dispute", &json!({ "protocol_id": id, "verdict": verdict }));
        Ok(verdict)
    }

    pub fn register_vax_timestamp(&mut self, caller: PartyAddress, c_addr: PartyAddress) -> ContractResult<()> {
        let (_, p) = self.vc_open_injection(caller, &c_addr)?;
        let since = p.t_consent3.ok_or(ContractError::GuardFailed("consent3 not given"))?;
        ensure(p.consent3, "consent3 was negative")?;
        ensure(p.t_vaccination.is_none(), "vaccination already registered")?;
        self.within(since, self.config.timeouts.c_vc)?;
        let now = self.now();
        let p = self.protocol_mut(&c_addr);
        p.t_vaccination = Some(now);
        let id = p.protocol_id;
        self.emit(caller, "register_vax_timestamp", &json!({ "protocol_id": id, "t_vaccination": now }));
        Ok(())
    }

    /// Marks the vial used, pays the VC its deposit and one service charge,
    /// and moves the citizen's deposit into the passport vault.
    fn complete_vaccination(&mut self, c_addr: PartyAddress, citizen_forfeits: bool) -> ContractResult<Amount> {
        let now = self.now();
        let p = self.protocol_mut(&c_addr);
        p.under_process = false;
        p.t_money_received_by_vc = Some(now);
        let (vc_id, token_id, stock_id) = (p.vc_id, p.token_id, p.stock_id.expect("committed"));
        let commit_vid = p.commit_vid.expect("committed");
        let (vc_escrow, c_escrow) = (p.vc_escrow.take(), p.c_escrow.take());
        let vc_addr = self.vc_govt.vc(vc_id).expect("registered").address;
        self.c_vc.vial_state.insert(commit_vid, VialState::Used);
        self.mark_vaccinated(token_id);
        let paid = self.consume_vial(vc_id, stock_id)?;
        if let Some(id) = vc_escrow {
            self.ledger.release_funds(id, vc_addr)?;
        }
        if let Some(id) = c_escrow {
            if citizen_forfeits {
                self.ledger.release_funds(id, vc_addr)?;
            } else {
                self.vault_injection_deposit(token_id, id);
            }
        }
        Ok(paid)
    }

    pub fn acknowledge_vaccination(&mut self, caller: PartyAddress, vc_id: VcId, ack: bool) -> ContractResult<()> {
        let p = self.c_open_injection(caller, vc_id)?;
        let since = p.t_vaccination.ok_or(ContractError::GuardFailed("vaccination not registered"))?;
        ensure(p.t_acknowledgement.is_none(), "vaccination already acknowledged")?;
        self.within(since, self.config.timeouts.c_vc)?;
        let now = self.now();
        let p = self.protocol_mut(&caller);
        p.acknowledgement = ack;
        p.t_acknowledgement = Some(now);
        let id = p.protocol_id;
        let paid = if ack {
            p.closure = Some(Closure::Completed);
            self.complete_vaccination(caller, false)?
        } else {
            p.under_process = false;
            p.closure = Some(Closure::Frozen);
            0
        };
        self.emit(caller, "acknowledge_vaccination", &json!({ "protocol_id": id, "ack": ack, "service_charge_paid": paid }));
        Ok(())
    }

    /// Exit for an injection whose responsible party let its window lapse.
    /// Callable by the waiting party, who receives every locked deposit. A
    /// citizen silent after vaccination is treated as vaccinated and its
    /// deposit goes to the VC.
    pub fn expire_injection(&mut self, caller: PartyAddress, c_addr: PartyAddress) -> ContractResult<()> {
        let p = match self.c_vc.current(&c_addr) {
            Some(p) if p.under_process => p,
            _ => return Err(ContractError::GuardFailed("no injection protocol under process")),
        };
        let t = &self.config.timeouts;
        let stage = if let (Some(s), false) = (p.t_consent3, p.consent3) {
            (Role::Vc, s, t.dispute)
        } else {
            let latest_first = [
                (p.t_vaccination, Role::Citizen),
                (p.t_consent3, Role::Vc),
                (p.t_consent2, Role::Citizen),
                (p.t_commit_vid, Role::Citizen),
                (p.t_consent1, Role::Vc),
                (p.t_commit_mt_proof, Role::Citizen),
                (p.t_lock_money_by_c, Role::Vc),
                (p.t_lock_money_by_vc, Role::Citizen),
                (p.t_protocol_begins, Role::Vc),
            ];
            let (since, silent) = latest_first
                .into_iter()
                .find_map(|(at, silent)| at.map(|s| (s, silent)))
                .expect("open protocol has begun");
            (silent, since, t.c_vc)
        };
        let (silent, since, window) = stage;
        let vc_addr = self.vc_govt.vc(p.vc_id).expect("registered").address;
        let waiting = if silent == Role::Vc { c_addr } else { vc_addr };
        if caller != waiting {
            return Err(ContractError::Unauthorized("only the waiting party may claim a timeout"));
        }
        self.require_expired(since, window)?;
        let id = p.protocol_id;
        let after_vaccination = p.t_vaccination.is_some();
        if after_vaccination {
            self.protocol_mut(&c_addr).closure = Some(Closure::TimedOut { silent });
            self.complete_vaccination(c_addr, true)?;
        } else {
            let winner = if silent == Role::Vc { Role::Citizen } else { Role::Vc };
            self.close_injection(c_addr, Payout::AllTo(winner), Closure::TimedOut { silent })?;
        }
        self.emit(caller, "expire_injection", &json!({ "protocol_id": id, "silent": silent }));
        Ok(())
    }
}
