//! Citizen token issuance and vaccine-passport issuance between a citizen and
//! the government.
//!
//! Only digests of personal data ever reach this contract.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cas::ContentId;
use crate::chain::{ensure, stamps_well_ordered, Chain, Closure, ContractError, ContractResult, Role, TokenId};
use crate::contracts::c_vc::VialState;
use crate::crypto::{hash, merkle_verify, Digest, MerkleProof, Signature};
use crate::ledger::{Amount, EscrowId, LedgerError, PartyAddress, Tick};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitizenRecord {
    pub citizen_info_digest: Digest,
    pub token_id: TokenId,
    pub address: PartyAddress,
    pub vaccination_status: bool,
    pub vp_status: bool,
    pub c_id: Option<ContentId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAppl {
    pub token_appl_id: u64,
    pub applicant: PartyAddress,
    pub citizen_info_digest: Digest,
    pub under_review: bool,
    pub t_token_appl: Option<Tick>,
    pub t_result: Option<Tick>,
    pub result: bool,
    pub closure: Option<Closure>,
}

impl TokenAppl {
    pub fn stamps(&self) -> [Option<Tick>; 2] {
        [self.t_token_appl, self.t_result]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VpAppl {
    pub vp_appl_id: u64,
    pub applicant_token_id: TokenId,
    pub t_lock_money_by_c: Option<Tick>,
    pub t_lock_money_by_govt: Option<Tick>,
    pub t_provide_vaccination_proof: Option<Tick>,
    pub t_consent1: Option<Tick>,
    pub t_consent2: Option<Tick>,
    pub t_issue_vp: Option<Tick>,
    pub t_money_received_by_c: Option<Tick>,
    pub t_money_received_by_govt: Option<Tick>,
    pub consent1: bool,
    pub consent2: bool,
    pub under_process: bool,
    pub c_escrow: Option<EscrowId>,
    pub govt_escrow: Option<EscrowId>,
    pub closure: Option<Closure>,
}

impl VpAppl {
    pub fn stamps(&self) -> [Option<Tick>; 6] {
        [
            self.t_lock_money_by_c,
            self.t_lock_money_by_govt,
            self.t_provide_vaccination_proof,
            self.t_consent1,
            self.t_consent2,
            self.t_issue_vp,
        ]
    }

    fn payout_stamps_ok(&self) -> bool {
        let start = self.t_lock_money_by_c;
        [self.t_money_received_by_c, self.t_money_received_by_govt]
            .into_iter()
            .flatten()
            .all(|t| start.is_some_and(|s| s <= t))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VpRecord {
    pub md_vp: Digest,
    pub sigma: Signature,
    pub c_id: ContentId,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CGovtState {
    pub(crate) token_appls: BTreeMap<u64, TokenAppl>,
    pub(crate) citizens: BTreeMap<TokenId, CitizenRecord>,
    pub(crate) digest_to_token: BTreeMap<Digest, TokenId>,
    pub(crate) addr_to_token: BTreeMap<PartyAddress, TokenId>,
    pub(crate) current_vp_appl: BTreeMap<PartyAddress, VpAppl>,
    pub(crate) vps: BTreeMap<TokenId, VpRecord>,
    /// Citizen's injection-protocol deposit, held until the passport is issued.
    pub(crate) injection_vault: BTreeMap<TokenId, EscrowId>,
    next_token_appl_id: u64,
    next_token_id: u64,
    next_vp_appl_id: u64,
}

impl CGovtState {
    pub fn token_appl(&self, id: u64) -> Option<&TokenAppl> {
        self.token_appls.get(&id)
    }

    /// The applicant's token application still under review, if any.
    pub fn open_token_appl_of(&self, applicant: &PartyAddress) -> Option<&TokenAppl> {
        self.token_appls.values().rev().find(|a| a.applicant == *applicant && a.under_review)
    }

    pub fn citizen(&self, token_id: TokenId) -> Option<&CitizenRecord> {
        self.citizens.get(&token_id)
    }

    pub fn citizens(&self) -> impl Iterator<Item = &CitizenRecord> {
        self.citizens.values()
    }

    pub fn token_of(&self, addr: &PartyAddress) -> Option<TokenId> {
        self.addr_to_token.get(addr).copied()
    }

    pub fn citizen_by_addr(&self, addr: &PartyAddress) -> Option<&CitizenRecord> {
        self.token_of(addr).and_then(|t| self.citizens.get(&t))
    }

    pub fn vp_appl(&self, c_addr: &PartyAddress) -> Option<&VpAppl> {
        self.current_vp_appl.get(c_addr)
    }

    pub fn vault(&self, token_id: TokenId) -> Option<EscrowId> {
        self.injection_vault.get(&token_id).copied()
    }

    pub(crate) fn escrow_refs(&self) -> impl Iterator<Item = EscrowId> + '_ {
        let appls = self.current_vp_appl.values().flat_map(|a| [a.c_escrow, a.govt_escrow]).flatten();
        appls.chain(self.injection_vault.values().copied())
    }

    pub(crate) fn open_instances(&self) -> Vec<String> {
        let tokens = self
            .token_appls
            .values()
            .filter(|a| a.under_review)
            .map(|a| format!("token application {}", a.token_appl_id));
        let vps = self
            .current_vp_appl
            .iter()
            .filter(|(_, a)| a.under_process)
            .map(|(addr, _)| format!("vp application of {}", addr.short()));
        tokens.chain(vps).collect()
    }

    /// Escrows of closed instances must all be settled.
    pub(crate) fn closed_instances_settled(&self) -> bool {
        self.current_vp_appl
            .values()
            .filter(|a| !a.under_process)
            .all(|a| a.c_escrow.is_none() && a.govt_escrow.is_none())
    }

    pub(crate) fn stamps_ok(&self) -> bool {
        self.token_appls.values().all(|a| stamps_well_ordered(&a.stamps()))
            && self
                .current_vp_appl
                .values()
                .all(|a| stamps_well_ordered(&a.stamps()) && a.payout_stamps_ok() && (!a.consent2 || a.consent1))
    }

    pub(crate) fn vp_status_consistent(&self) -> bool {
        self.citizens.values().all(|c| !c.vp_status || (c.vaccination_status && c.c_id.is_some()))
    }
}

impl Chain {
    pub fn c_govt(&self) -> &CGovtState {
        &self.c_govt
    }

    pub(crate) fn require_citizen(&self, caller: PartyAddress) -> ContractResult<TokenId> {
        self.c_govt.token_of(&caller).ok_or(ContractError::Unauthorized("caller holds no token"))
    }

    pub fn appl_for_token_id(&mut self, caller: PartyAddress, citizen_info_digest: Digest) -> ContractResult<u64> {
        ensure(!self.c_govt.digest_to_token.contains_key(&citizen_info_digest), "citizen already holds a token")?;
        ensure(self.c_govt.token_of(&caller).is_none(), "caller already holds a token")?;
        let open = self
            .c_govt
            .token_appls
            .values()
            .any(|a| a.under_review && (a.citizen_info_digest == citizen_info_digest || a.applicant == caller));
        ensure(!open, "token application already under review")?;
        self.c_govt.next_token_appl_id += 1;
        let id = self.c_govt.next_token_appl_id;
        let now = self.now();
        self.c_govt.token_appls.insert(
            id,
            TokenAppl {
                token_appl_id: id,
                applicant: caller,
                citizen_info_digest,
                under_review: true,
                t_token_appl: Some(now),
                t_result: None,
                result: false,
                closure: None,
            },
        );
        self.emit(caller, "appl_for_token_id", &json!({ "token_appl_id": id, "citizen_info_digest": citizen_info_digest }));
        Ok(id)
    }

    pub fn verify_appl(&mut self, caller: PartyAddress, token_appl_id: u64, decision: bool) -> ContractResult<Option<TokenId>> {
        self.require_govt(caller)?;
        let appl = self
            .c_govt
            .token_appls
            .get(&token_appl_id)
            .ok_or(ContractError::GuardFailed("unknown token application id"))?;
        ensure(appl.under_review, "token application not under review")?;
        let t_appl = appl.t_token_appl.ok_or(ContractError::GuardFailed("token application not timestamped"))?;
        ensure(appl.t_result.is_none(), "token application already decided")?;
        self.within(t_appl, self.config.timeouts.c_govt)?;
        ensure(!self.c_govt.digest_to_token.contains_key(&appl.citizen_info_digest), "citizen already holds a token")?;
        let (digest, applicant) = (appl.citizen_info_digest, appl.applicant);
        let now = self.now();
        let token_id = decision.then(|| {
            self.c_govt.next_token_id += 1;
            TokenId(self.c_govt.next_token_id)
        });
        if let Some(token_id) = token_id {
            self.c_govt.citizens.insert(
                token_id,
                CitizenRecord {
                    citizen_info_digest: digest,
                    token_id,
                    address: applicant,
                    vaccination_status: false,
                    vp_status: false,
                    c_id: None,
                },
            );
            self.c_govt.digest_to_token.insert(digest, token_id);
            self.c_govt.addr_to_token.insert(applicant, token_id);
        }
        let appl = self.c_govt.token_appls.get_mut(&token_appl_id).expect("checked above");
        appl.under_review = false;
        appl.result = decision;
        appl.t_result = Some(now);
        appl.closure = Some(if decision { Closure::Completed } else { Closure::Declined { by: Role::Govt } });
        self.emit(caller, "verify_appl", &json!({ "token_appl_id": token_appl_id, "decision": decision, "token_id": token_id }));
        Ok(token_id)
    }

    /// Applicant closes a token application the government never decided.
    pub fn expire_token_appl(&mut self, caller: PartyAddress, token_appl_id: u64) -> ContractResult<()> {
        let appl = self
            .c_govt
            .token_appls
            .get(&token_appl_id)
            .ok_or(ContractError::GuardFailed("unknown token application id"))?;
        if appl.applicant != caller {
            return Err(ContractError::Unauthorized("only the applicant may claim this timeout"));
        }
        ensure(appl.under_review, "token application not under review")?;
        let t_appl = appl.t_token_appl.ok_or(ContractError::GuardFailed("token application not timestamped"))?;
        self.require_expired(t_appl, self.config.timeouts.c_govt)?;
        let appl = self.c_govt.token_appls.get_mut(&token_appl_id).expect("checked above");
        appl.under_review = false;
        appl.closure = Some(Closure::TimedOut { silent: Role::Govt });
        self.emit(caller, "expire_token_appl", &json!({ "token_appl_id": token_appl_id }));
        Ok(())
    }

    /// Checks shared by every passport operation: `c_addr` is a vaccinated
    /// citizen without a passport whose application is open.
    fn open_vp_appl(&self, c_addr: &PartyAddress) -> ContractResult<(TokenId, &VpAppl)> {
        let record = self.c_govt.citizen_by_addr(c_addr).ok_or(ContractError::GuardFailed("citizen holds no token"))?;
        ensure(record.vaccination_status, "citizen is not vaccinated")?;
        ensure(!record.vp_status, "citizen already holds a vaccine passport")?;
        let appl = match self.c_govt.current_vp_appl.get(c_addr) {
            Some(appl) if appl.under_process => appl,
            _ => return Err(ContractError::GuardFailed("no vaccine passport application under process")),
        };
        ensure(appl.applicant_token_id == record.token_id, "application belongs to another token")?;
        Ok((record.token_id, appl))
    }

    fn lock_checked(&mut self, party: PartyAddress, amount: Amount, purpose: &str) -> ContractResult<EscrowId> {
        let balance = self.ledger.balance(&party);
        if balance < amount {
            return Err(LedgerError::InsufficientFunds { balance, needed: amount }.into());
        }
        Ok(self.ledger.lock_funds(party, amount, purpose)?)
    }

    pub fn initiate_vp_appl_and_lock_money(&mut self, caller: PartyAddress, locked: Amount) -> ContractResult<u64> {
        let token_id = self.require_citizen(caller)?;
        let record = &self.c_govt.citizens[&token_id];
        ensure(record.vaccination_status, "citizen is not vaccinated")?;
        ensure(!record.vp_status, "citizen already holds a vaccine passport")?;
        ensure(locked == self.config.deposits.vp, "incorrect amount locked")?;
        let open = self.c_govt.current_vp_appl.get(&caller).is_some_and(|a| a.under_process);
        ensure(!open, "vaccine passport application already under process")?;
        let escrow = self.lock_checked(caller, locked, "vp-citizen")?;
        self.c_govt.next_vp_appl_id += 1;
        let id = self.c_govt.next_vp_appl_id;
        let now = self.now();
        let appl = VpAppl {
            vp_appl_id: id,
            applicant_token_id: token_id,
            t_lock_money_by_c: Some(now),
            under_process: true,
            c_escrow: Some(escrow),
            ..VpAppl::default()
        };
        self.c_govt.current_vp_appl.insert(caller, appl);
        self.emit(caller, "initiate_vp_appl_and_lock_money", &json!({ "vp_appl_id": id, "token_id": token_id, "locked": locked }));
        Ok(id)
    }

    pub fn lock_money_by_govt(&mut self, caller: PartyAddress, c_addr: PartyAddress, locked: Amount) -> ContractResult<()> {
        self.require_govt(caller)?;
        let (_, appl) = self.open_vp_appl(&c_addr)?;
        let since = appl.t_lock_money_by_c.ok_or(ContractError::GuardFailed("citizen has not locked"))?;
        ensure(appl.t_lock_money_by_govt.is_none(), "government already locked")?;
        self.within(since, self.config.timeouts.c_govt)?;
        ensure(locked == self.config.deposits.vp, "incorrect amount locked")?;
        let escrow = self.lock_checked(caller, locked, "vp-govt")?;
        let now = self.now();
        let appl = self.c_govt.current_vp_appl.get_mut(&c_addr).expect("checked above");
        appl.govt_escrow = Some(escrow);
        appl.t_lock_money_by_govt = Some(now);
        let id = appl.vp_appl_id;
        self.emit(caller, "lock_money_by_govt", &json!({ "vp_appl_id": id, "locked": locked }));
        Ok(())
    }

    /// The citizen discloses its vial id; it must match what was committed
    /// during its latest injection and the vial must be used.
    pub fn send_vaccination_proof(&mut self, caller: PartyAddress, v_id: &[u8], commit_mt_proof: Digest) -> ContractResult<()> {
        self.require_citizen(caller)?;
        let (token_id, appl) = self.open_vp_appl(&caller)?;
        let since = appl.t_lock_money_by_govt.ok_or(ContractError::GuardFailed("government has not locked"))?;
        ensure(appl.t_provide_vaccination_proof.is_none(), "vaccination proof already provided")?;
        self.within(since, self.config.timeouts.c_govt)?;
        let injection = self
            .c_vc
            .latest_for_token(token_id)
            .ok_or(ContractError::GuardFailed("no injection recorded for citizen"))?;
        ensure(injection.commit_mt_proof == Some(commit_mt_proof), "proof commitment does not match injection")?;
        let vid_digest = hash(v_id);
        ensure(injection.commit_vid == Some(vid_digest), "vial id does not match injection commitment")?;
        ensure(self.c_vc.vial_state(&vid_digest) == VialState::Used, "vial is not marked used")?;
        let now = self.now();
        let appl = self.c_govt.current_vp_appl.get_mut(&caller).expect("checked above");
        appl.t_provide_vaccination_proof = Some(now);
        let id = appl.vp_appl_id;
        self.emit(caller, "send_vaccination_proof", &json!({ "vp_appl_id": id, "commit_vid": vid_digest, "commit_mt_proof": commit_mt_proof }));
        Ok(())
    }

    /// Releases both passport-application escrows to the given recipients
    /// and closes the application.
    fn settle_vp_appl(&mut self, c_addr: PartyAddress, c_to: PartyAddress, govt_to: PartyAddress, closure: Closure) -> ContractResult<()> {
        let now = self.now();
        let appl = self.c_govt.current_vp_appl.get_mut(&c_addr).expect("open application");
        let (c_escrow, govt_escrow) = (appl.c_escrow.take(), appl.govt_escrow.take());
        appl.under_process = false;
        appl.closure = Some(closure);
        if c_escrow.is_some() {
            appl.t_money_received_by_c = Some(now);
        }
        if govt_escrow.is_some() {
            appl.t_money_received_by_govt = Some(now);
        }
        if let Some(id) = c_escrow {
            self.ledger.release_funds(id, c_to)?;
        }
        if let Some(id) = govt_escrow {
            self.ledger.release_funds(id, govt_to)?;
        }
        Ok(())
    }

    pub fn send_consent1(&mut self, caller: PartyAddress, c_addr: PartyAddress, consent1: bool) -> ContractResult<()> {
        self.require_govt(caller)?;
        let (_, appl) = self.open_vp_appl(&c_addr)?;
        let since = appl.t_provide_vaccination_proof.ok_or(ContractError::GuardFailed("vaccination proof not provided"))?;
        ensure(appl.t_consent1.is_none(), "consent1 already given")?;
        self.within(since, self.config.timeouts.c_govt)?;
        let now = self.now();
        let appl = self.c_govt.current_vp_appl.get_mut(&c_addr).expect("checked above");
        appl.consent1 = consent1;
        appl.t_consent1 = Some(now);
        let id = appl.vp_appl_id;
        if !consent1 {
            self.settle_vp_appl(c_addr, c_addr, caller, Closure::Declined { by: Role::Govt })?;
        }
        self.emit(caller, "send_consent1", &json!({ "vp_appl_id": id, "consent1": consent1 }));
        Ok(())
    }

    /// A `false` consent2 opens a dispute that the government must back with
    /// [`Chain::submit_dissent_proof`] inside the dispute window.
    pub fn send_consent2(&mut self, caller: PartyAddress, c_addr: PartyAddress, consent2: bool) -> ContractResult<()> {
        self.require_govt(caller)?;
        let (_, appl) = self.open_vp_appl(&c_addr)?;
        let since = appl.t_consent1.ok_or(ContractError::GuardFailed("consent1 not given"))?;
        ensure(appl.consent1, "consent1 was negative")?;
        ensure(appl.t_consent2.is_none(), "consent2 already given")?;
        self.within(since, self.config.timeouts.c_govt)?;
        let now = self.now();
        let appl = self.c_govt.current_vp_appl.get_mut(&c_addr).expect("checked above");
        appl.consent2 = consent2;
        appl.t_consent2 = Some(now);
        let id = appl.vp_appl_id;
        self.emit(caller, "send_consent2", &json!({ "vp_appl_id": id, "consent2": consent2 }));
        Ok(())
    }

    /// Government reveals the Merkle proof behind a negative consent2. The
    /// proof must match the injection commitments; the contract then checks
    /// membership against the stock root. A verifying proof means the
    /// dissent was wrongful and the government's deposit goes to the
    /// citizen; otherwise the citizen's deposit goes to the government.
    pub fn submit_dissent_proof(&mut self, caller: PartyAddress, c_addr: PartyAddress, proof: &MerkleProof) -> ContractResult<bool> {
        self.require_govt(caller)?;
        let (token_id, appl) = self.open_vp_appl(&c_addr)?;
        let since = appl.t_consent2.ok_or(ContractError::GuardFailed("consent2 not given"))?;
        ensure(!appl.consent2, "no dispute open")?;
        self.within(since, self.config.timeouts.dispute)?;
        let injection = self
            .c_vc
            .latest_for_token(token_id)
            .ok_or(ContractError::GuardFailed("no injection recorded for citizen"))?;
        ensure(injection.commit_mt_proof == Some(proof.commitment()), "revealed proof does not match commitment")?;
        ensure(injection.commit_vid == Some(hash(&proof.leaf)), "revealed leaf does not match vial commitment")?;
        let root = injection
            .stock_id
            .and_then(|s| self.vc_govt.stock(s))
            .map(|s| s.stock_mr)
            .ok_or(ContractError::GuardFailed("injection has no stock"))?;
        let valid = merkle_verify(proof, &root);
        let id = appl.vp_appl_id;
        if valid {
            self.settle_vp_appl(c_addr, c_addr, c_addr, Closure::Adjudicated { faulty: Role::Govt })?;
        } else {
            self.settle_vp_appl(c_addr, caller, caller, Closure::Adjudicated { faulty: Role::Citizen })?;
        }
        self.emit(caller, "submit_dissent_proof", &json!({ "vp_appl_id": id, "proof_valid": valid }));
        Ok(valid)
    }

    pub fn upload_vp_info_and_get_payment(
        &mut self,
        caller: PartyAddress,
        c_addr: PartyAddress,
        md_vp: Digest,
        sigma: Signature,
        c_id: ContentId,
    ) -> ContractResult<()> {
        self.require_govt(caller)?;
        let (token_id, appl) = self.open_vp_appl(&c_addr)?;
        let since = appl.t_consent2.ok_or(ContractError::GuardFailed("consent2 not given"))?;
        ensure(appl.t_issue_vp.is_none(), "vaccine passport already issued")?;
        self.within(since, self.config.timeouts.c_govt)?;
        ensure(appl.consent2, "consent2 was negative")?;
        ensure(self.govt_key.verify(md_vp.as_bytes(), &sigma), "signature does not verify under the government key")?;
        let id = appl.vp_appl_id;
        let now = self.now();
        self.c_govt.current_vp_appl.get_mut(&c_addr).expect("checked above").t_issue_vp = Some(now);
        self.settle_vp_appl(c_addr, c_addr, caller, Closure::Completed)?;
        if let Some(vault) = self.c_govt.injection_vault.remove(&token_id) {
            self.ledger.release_funds(vault, c_addr)?;
        }
        self.c_govt.vps.insert(token_id, VpRecord { md_vp, sigma, c_id });
        let record = self.c_govt.citizens.get_mut(&token_id).expect("tokened");
        record.vp_status = true;
        record.c_id = Some(c_id);
        self.emit(caller, "upload_vp_info_and_get_payment", &json!({ "vp_appl_id": id, "md_vp": md_vp, "sigma": sigma, "c_id": c_id }));
        Ok(())
    }

    /// Exit for a passport application whose responsible party went silent.
    /// The waiting party calls it; the silent party's deposit goes to the
    /// waiting party.
    pub fn expire_vp_appl(&mut self, caller: PartyAddress, c_addr: PartyAddress) -> ContractResult<()> {
        let (_, appl) = self.open_vp_appl(&c_addr)?;
        let t = &self.config.timeouts;
        let (silent, since, window) = if let Some(t2) = appl.t_consent2 {
            (Role::Govt, t2, if appl.consent2 { t.c_govt } else { t.dispute })
        } else if let Some(t1) = appl.t_consent1 {
            (Role::Govt, t1, t.c_govt)
        } else if let Some(tp) = appl.t_provide_vaccination_proof {
            (Role::Govt, tp, t.c_govt)
        } else if let Some(tg) = appl.t_lock_money_by_govt {
            (Role::Citizen, tg, t.c_govt)
        } else {
            (Role::Govt, appl.t_lock_money_by_c.expect("opened with a lock"), t.c_govt)
        };
        let waiting = if silent == Role::Govt { c_addr } else { self.govt };
        if caller != waiting {
            return Err(ContractError::Unauthorized("only the waiting party may claim a timeout"));
        }
        self.require_expired(since, window)?;
        let id = appl.vp_appl_id;
        self.settle_vp_appl(c_addr, waiting, waiting, Closure::TimedOut { silent })?;
        self.emit(caller, "expire_vp_appl", &json!({ "vp_appl_id": id, "silent": silent }));
        Ok(())
    }

    /// Read-only passport lookup. Visible to the owner, the government, and
    /// verifiers holding an access grant.
    pub fn vp_record(&self, caller: PartyAddress, token_id: TokenId) -> ContractResult<&VpRecord> {
        let owner = self.c_govt.citizen(token_id).map(|c| c.address);
        let allowed = owner == Some(caller) || caller == self.govt || self.c_vf.has_grant(token_id, &caller);
        if !allowed {
            return Err(ContractError::Unauthorized("no access to this passport"));
        }
        self.c_govt.vps.get(&token_id).ok_or(ContractError::GuardFailed("no vaccine passport for token"))
    }

    pub(crate) fn mark_vaccinated(&mut self, token_id: TokenId) {
        self.c_govt.citizens.get_mut(&token_id).expect("tokened").vaccination_status = true;
    }

    pub(crate) fn vault_injection_deposit(&mut self, token_id: TokenId, escrow: EscrowId) {
        self.c_govt.injection_vault.insert(token_id, escrow);
    }
}
