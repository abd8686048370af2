//! Vaccine-passport verification between a citizen and a verifier.
//!
//! The re-encryption key travels off-chain; only its digest is recorded.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chain::{ensure, stamps_well_ordered, Chain, Closure, ContractError, ContractResult, Role, TokenId};
use crate::contracts::c_govt::VpRecord;
use crate::crypto::Digest;
use crate::ledger::{Amount, EscrowId, LedgerError, PartyAddress, Tick};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationProtocol {
    pub vf_protocol_id: u64,
    pub under_execution: bool,
    pub token_id: TokenId,
    pub citizen: PartyAddress,
    pub vf_addr: PartyAddress,
    pub commit_rk: Option<Digest>,
    pub consent: bool,
    pub verification_result: bool,
    pub t_lock_money_by_vf: Option<Tick>,
    pub t_lock_money_and_commit_rk_by_c: Option<Tick>,
    pub t_provide_consent: Option<Tick>,
    pub t_grant_access_by_c: Option<Tick>,
    pub t_fetch_vp_info: Option<Tick>,
    pub t_verification_result: Option<Tick>,
    pub t_unlock_money: Option<Tick>,
    pub vf_escrow: Option<EscrowId>,
    pub c_escrow: Option<EscrowId>,
    pub closure: Option<Closure>,
}

impl VerificationProtocol {
    pub fn stamps(&self) -> [Option<Tick>; 6] {
        [
            self.t_lock_money_by_vf,
            self.t_lock_money_and_commit_rk_by_c,
            self.t_provide_consent,
            self.t_grant_access_by_c,
            self.t_fetch_vp_info,
            self.t_verification_result,
        ]
    }

    fn consistent(&self) -> bool {
        let unlock_ok = self.t_unlock_money.is_none() || self.t_lock_money_by_vf <= self.t_unlock_money;
        stamps_well_ordered(&self.stamps()) && unlock_ok
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub vf_protocol_id: u64,
    pub vf_addr: PartyAddress,
    pub time: Tick,
    pub result: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CVfState {
    pub(crate) protocols: BTreeMap<u64, VerificationProtocol>,
    /// Access-control matrix: token → verifier → granted.
    pub(crate) access: BTreeMap<TokenId, BTreeMap<PartyAddress, bool>>,
    pub(crate) history: BTreeMap<TokenId, Vec<VerificationRecord>>,
    next_vf_protocol_id: u64,
}

impl CVfState {
    pub fn protocol(&self, id: u64) -> Option<&VerificationProtocol> {
        self.protocols.get(&id)
    }

    pub fn protocols(&self) -> impl Iterator<Item = &VerificationProtocol> {
        self.protocols.values()
    }

    pub fn open_between(&self, citizen: &PartyAddress, vf: &PartyAddress) -> Option<&VerificationProtocol> {
        self.protocols.values().find(|p| p.under_execution && p.citizen == *citizen && p.vf_addr == *vf)
    }

    pub fn has_grant(&self, token_id: TokenId, vf: &PartyAddress) -> bool {
        self.access.get(&token_id).and_then(|m| m.get(vf)).copied().unwrap_or(false)
    }

    pub fn history(&self, token_id: TokenId) -> &[VerificationRecord] {
        self.history.get(&token_id).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn escrow_refs(&self) -> impl Iterator<Item = EscrowId> + '_ {
        self.protocols.values().flat_map(|p| [p.vf_escrow, p.c_escrow]).flatten()
    }

    pub(crate) fn open_instances(&self) -> Vec<String> {
        self.protocols
            .values()
            .filter(|p| p.under_execution)
            .map(|p| format!("verification {}", p.vf_protocol_id))
            .collect()
    }

    pub(crate) fn closed_instances_settled(&self) -> bool {
        self.protocols
            .values()
            .filter(|p| !p.under_execution)
            .all(|p| p.vf_escrow.is_none() && p.c_escrow.is_none())
    }

    pub(crate) fn stamps_ok(&self) -> bool {
        self.protocols.values().all(VerificationProtocol::consistent)
    }
}

impl Chain {
    pub fn c_vf(&self) -> &CVfState {
        &self.c_vf
    }

    fn open_verification(&self, id: u64) -> ContractResult<&VerificationProtocol> {
        let p = self.c_vf.protocols.get(&id).ok_or(ContractError::GuardFailed("unknown verification protocol id"))?;
        ensure(p.under_execution, "verification protocol not under execution")?;
        Ok(p)
    }

    /// Caller must be the verifier that opened instance `id`.
    fn vf_open_verification(&self, caller: PartyAddress, id: u64) -> ContractResult<&VerificationProtocol> {
        let p = self.c_vf.protocols.get(&id).ok_or(ContractError::GuardFailed("unknown verification protocol id"))?;
        if p.vf_addr != caller {
            return Err(ContractError::Unauthorized("caller is not this protocol's verifier"));
        }
        self.open_verification(id)
    }

    /// Caller must be the citizen whose passport instance `id` verifies.
    fn c_open_verification(&self, caller: PartyAddress, id: u64) -> ContractResult<&VerificationProtocol> {
        let token_id = self.require_citizen(caller)?;
        let p = self.open_verification(id)?;
        ensure(p.token_id == token_id, "protocol belongs to another citizen")?;
        Ok(p)
    }

    fn verification_mut(&mut self, id: u64) -> &mut VerificationProtocol {
        self.c_vf.protocols.get_mut(&id).expect("checked above")
    }

    fn lock_verification_deposit(&mut self, party: PartyAddress, locked: Amount, purpose: &str) -> ContractResult<EscrowId> {
        ensure(locked == self.config.deposits.verification, "incorrect amount locked")?;
        let balance = self.ledger.balance(&party);
        if balance < locked {
            return Err(LedgerError::InsufficientFunds { balance, needed: locked }.into());
        }
        Ok(self.ledger.lock_funds(party, locked, purpose)?)
    }

    /// Releases both deposits (to `vf_to` and `c_to`) and closes instance `id`.
    fn settle_verification(&mut self, id: u64, vf_to: PartyAddress, c_to: PartyAddress, closure: Closure) -> ContractResult<()> {
        let now = self.now();
        let p = self.verification_mut(id);
        let (vf_escrow, c_escrow) = (p.vf_escrow.take(), p.c_escrow.take());
        p.under_execution = false;
        p.t_unlock_money = Some(now);
        p.closure = Some(closure);
        if let Some(e) = vf_escrow {
            self.ledger.release_funds(e, vf_to)?;
        }
        if let Some(e) = c_escrow {
            self.ledger.release_funds(e, c_to)?;
        }
        Ok(())
    }

    pub fn lock_money_by_vf(&mut self, caller: PartyAddress, c_addr: PartyAddress, locked: Amount) -> ContractResult<u64> {
        let record = self.c_govt.citizen_by_addr(&c_addr).ok_or(ContractError::GuardFailed("citizen holds no token"))?;
        ensure(record.vaccination_status && record.vp_status, "citizen holds no vaccine passport")?;
        ensure(caller != c_addr, "citizen cannot verify itself")?;
        let token_id = record.token_id;
        let open = self
            .c_vf
            .protocols
            .values()
            .any(|p| p.under_execution && p.token_id == token_id && p.vf_addr == caller);
        ensure(!open, "verification between this pair already under execution")?;
        let escrow = self.lock_verification_deposit(caller, locked, "verification-vf")?;
        self.c_vf.next_vf_protocol_id += 1;
        let id = self.c_vf.next_vf_protocol_id;
        let now = self.now();
        self.c_vf.protocols.insert(
            id,
            VerificationProtocol {
                vf_protocol_id: id,
                under_execution: true,
                token_id,
                citizen: c_addr,
                vf_addr: caller,
                commit_rk: None,
                consent: false,
                verification_result: false,
                t_lock_money_by_vf: Some(now),
                t_lock_money_and_commit_rk_by_c: None,
                t_provide_consent: None,
                t_grant_access_by_c: None,
                t_fetch_vp_info: None,
                t_verification_result: None,
                t_unlock_money: None,
                vf_escrow: Some(escrow),
                c_escrow: None,
                closure: None,
            },
        );
        self.emit(caller, "lock_money_by_vf", &json!({ "vf_protocol_id": id, "token_id": token_id, "locked": locked }));
        Ok(id)
    }

    pub fn lock_money_and_commit_rk(&mut self, caller: PartyAddress, id: u64, commit_rk: Digest, locked: Amount) -> ContractResult<()> {
        let p = self.c_open_verification(caller, id)?;
        let since = p.t_lock_money_by_vf.ok_or(ContractError::GuardFailed("verifier has not locked"))?;
        ensure(p.t_lock_money_and_commit_rk_by_c.is_none(), "key already committed")?;
        self.within(since, self.config.timeouts.c_vf)?;
        let escrow = self.lock_verification_deposit(caller, locked, "verification-citizen")?;
        let now = self.now();
        let p = self.verification_mut(id);
        p.commit_rk = Some(commit_rk);
        p.c_escrow = Some(escrow);
        p.t_lock_money_and_commit_rk_by_c = Some(now);
        self.emit(caller, "lock_money_and_commit_rk", &json!({ "vf_protocol_id": id, "commit_rk": commit_rk, "locked": locked }));
        Ok(())
    }

    pub fn provide_consent(&mut self, caller: PartyAddress, id: u64, decision: bool) -> ContractResult<()> {
        let p = self.vf_open_verification(caller, id)?;
        let since = p.t_lock_money_and_commit_rk_by_c.ok_or(ContractError::GuardFailed("key not committed"))?;
        ensure(p.t_provide_consent.is_none(), "consent already given")?;
        self.within(since, self.config.timeouts.c_vf)?;
        let now = self.now();
        let p = self.verification_mut(id);
        p.consent = decision;
        p.t_provide_consent = Some(now);
        let c_addr = p.citizen;
        if !decision {
            self.settle_verification(id, caller, c_addr, Closure::Declined { by: Role::Verifier })?;
        }
        self.emit(caller, "provide_consent", &json!({ "vf_protocol_id": id, "consent": decision }));
        Ok(())
    }

    pub fn grant_access_permission(&mut self, caller: PartyAddress, id: u64) -> ContractResult<()> {
        let p = self.c_open_verification(caller, id)?;
        let since = p.t_provide_consent.ok_or(ContractError::GuardFailed("verifier has not consented"))?;
        ensure(p.t_grant_access_by_c.is_none(), "access already granted")?;
        self.within(since, self.config.timeouts.c_vf)?;
        ensure(p.consent, "verifier consent was negative")?;
        let (token_id, vf) = (p.token_id, p.vf_addr);
        let now = self.now();
        self.verification_mut(id).t_grant_access_by_c = Some(now);
        self.c_vf.access.entry(token_id).or_default().insert(vf, true);
        self.emit(caller, "grant_access_permission", &json!({ "vf_protocol_id": id, "vf": vf }));
        Ok(())
    }

    pub fn revoke_access_permission(&mut self, caller: PartyAddress, vf_addr: PartyAddress) -> ContractResult<()> {
        let token_id = self.require_citizen(caller)?;
        ensure(self.c_vf.has_grant(token_id, &vf_addr), "no access grant for this verifier")?;
        self.c_vf.access.entry(token_id).or_default().insert(vf_addr, false);
        self.emit(caller, "revoke_access_permission", &json!({ "token_id": token_id, "vf": vf_addr }));
        Ok(())
    }

    pub fn fetch_vp_info(&mut self, caller: PartyAddress, id: u64) -> ContractResult<VpRecord> {
        let p = self.vf_open_verification(caller, id)?;
        let since = p.t_grant_access_by_c.ok_or(ContractError::GuardFailed("access not granted yet"))?;
        ensure(p.t_fetch_vp_info.is_none(), "passport already fetched")?;
        self.within(since, self.config.timeouts.c_vf)?;
        let token_id = p.token_id;
        if !self.c_vf.has_grant(token_id, &caller) {
            return Err(ContractError::Unauthorized("access permission revoked"));
        }
        let record = self.c_govt.vps.get(&token_id).cloned().ok_or(ContractError::GuardFailed("no vaccine passport for token"))?;
        let now = self.now();
        self.verification_mut(id).t_fetch_vp_info = Some(now);
        self.emit(caller, "fetch_vp_info", &json!({ "vf_protocol_id": id }));
        Ok(record)
    }

    pub fn verification_result(&mut self, caller: PartyAddress, id: u64, result: bool) -> ContractResult<()> {
        let p = self.vf_open_verification(caller, id)?;
        let since = p.t_fetch_vp_info.ok_or(ContractError::GuardFailed("passport not fetched yet"))?;
        ensure(p.t_verification_result.is_none(), "result already recorded")?;
        self.within(since, self.config.timeouts.c_vf)?;
        let (token_id, c_addr) = (p.token_id, p.citizen);
        let now = self.now();
        let p = self.verification_mut(id);
        p.verification_result = result;
        p.t_verification_result = Some(now);
        self.settle_verification(id, caller, c_addr, Closure::Completed)?;
        self.c_vf.history.entry(token_id).or_default().push(VerificationRecord {
            vf_protocol_id: id,
            vf_addr: caller,
            time: now,
            result,
        });
        self.emit(caller, "verification_result", &json!({ "vf_protocol_id": id, "result": result }));
        Ok(())
    }

    /// Exit for a verification whose responsible party went silent. The
    /// waiting party collects every deposit locked so far.
    pub fn expire_verification(&mut self, caller: PartyAddress, id: u64) -> ContractResult<()> {
        let p = self.open_verification(id)?;
        let latest_first = [
            (p.t_fetch_vp_info, Role::Verifier),
            (p.t_grant_access_by_c, Role::Verifier),
            (p.t_provide_consent, Role::Citizen),
            (p.t_lock_money_and_commit_rk_by_c, Role::Verifier),
            (p.t_lock_money_by_vf, Role::Citizen),
        ];
        let (since, silent) = latest_first
            .into_iter()
            .find_map(|(at, silent)| at.map(|s| (s, silent)))
            .expect("open protocol has a lock");
        let waiting = if silent == Role::Verifier { p.citizen } else { p.vf_addr };
        if caller != waiting {
            return Err(ContractError::Unauthorized("only the waiting party may claim a timeout"));
        }
        self.require_expired(since, self.config.timeouts.c_vf)?;
        self.settle_verification(id, waiting, waiting, Closure::TimedOut { silent })?;
        self.emit(caller, "expire_verification", &json!({ "vf_protocol_id": id, "silent": silent }));
        Ok(())
    }
}
