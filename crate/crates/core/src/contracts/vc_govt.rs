//! VC registration and vaccine-stock refill between a vaccination center and
//! the government.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chain::{ensure, stamps_well_ordered, Chain, Closure, ContractError, ContractResult, Role, StockId, VcId};
use crate::crypto::Digest;
use crate::ledger::{Amount, EscrowId, LedgerError, PartyAddress, Tick};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegAppl {
    pub reg_appl_id: Option<u64>,
    pub under_review: bool,
    pub t_reg_appl: Option<Tick>,
    pub t_hash_appl: Option<Tick>,
    pub hash: Option<Digest>,
    pub t_decide_on_hash: Option<Tick>,
    pub decision: bool,
    pub t_decide_on_appl: Option<Tick>,
    pub closure: Option<Closure>,
}

impl RegAppl {
    pub fn stamps(&self) -> [Option<Tick>; 4] {
        [self.t_reg_appl, self.t_hash_appl, self.t_decide_on_hash, self.t_decide_on_appl]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VcRecord {
    pub vc_id: VcId,
    pub address: PartyAddress,
    pub current_stock_id: Option<StockId>,
    pub vials_in_stock: u64,
    /// Vials committed to an injection that has not finished yet.
    pub vials_reserved: u64,
    pub money_earned: Amount,
    pub doses_administered: u64,
}

impl VcRecord {
    pub fn vials_available(&self) -> u64 {
        self.vials_in_stock - self.vials_reserved
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReStockAppl {
    pub refill_appl_id: u64,
    pub t_refill_appl: Option<Tick>,
    pub t_commitment: Option<Tick>,
    pub t_accept_vaccine_set: Option<Tick>,
    pub under_process: bool,
    pub vials_count: u64,
    pub commitment: Option<Digest>,
    pub service_escrows: Vec<EscrowId>,
    pub closure: Option<Closure>,
}

impl ReStockAppl {
    pub fn stamps(&self) -> [Option<Tick>; 3] {
        [self.t_refill_appl, self.t_commitment, self.t_accept_vaccine_set]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaccineStock {
    pub stock_id: StockId,
    pub owner: VcId,
    pub vials_count: u64,
    pub stock_mr: Digest,
    pub vials_used: u64,
    /// One service-charge escrow per vial still to be administered.
    pub pending_charges: VecDeque<EscrowId>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct VcGovtState {
    pub(crate) current_registration_appl: BTreeMap<PartyAddress, RegAppl>,
    pub(crate) reg_appl_belongs_to: BTreeMap<u64, PartyAddress>,
    pub(crate) vc_addr_to_vc_id: BTreeMap<PartyAddress, VcId>,
    pub(crate) vc_details: BTreeMap<VcId, VcRecord>,
    pub(crate) current_refill_appl: BTreeMap<PartyAddress, ReStockAppl>,
    pub(crate) vaccine_stocks: BTreeMap<StockId, VaccineStock>,
    next_reg_appl_id: u64,
    next_vc_id: u64,
    next_refill_appl_id: u64,
    next_stock_id: u64,
}

impl VcGovtState {
    pub fn registration(&self, vc_addr: &PartyAddress) -> Option<&RegAppl> {
        self.current_registration_appl.get(vc_addr)
    }

    pub fn refill(&self, vc_addr: &PartyAddress) -> Option<&ReStockAppl> {
        self.current_refill_appl.get(vc_addr)
    }

    pub fn vc_id_of(&self, vc_addr: &PartyAddress) -> Option<VcId> {
        self.vc_addr_to_vc_id.get(vc_addr).copied()
    }

    pub fn vc(&self, vc_id: VcId) -> Option<&VcRecord> {
        self.vc_details.get(&vc_id)
    }

    pub fn vcs(&self) -> impl Iterator<Item = &VcRecord> {
        self.vc_details.values()
    }

    pub fn stock(&self, stock_id: StockId) -> Option<&VaccineStock> {
        self.vaccine_stocks.get(&stock_id)
    }

    pub fn stocks(&self) -> impl Iterator<Item = &VaccineStock> {
        self.vaccine_stocks.values()
    }

    pub(crate) fn escrow_refs(&self) -> impl Iterator<Item = EscrowId> + '_ {
        let refills = self.current_refill_appl.values().flat_map(|a| a.service_escrows.iter().copied());
        let stocks = self.vaccine_stocks.values().flat_map(|s| s.pending_charges.iter().copied());
        refills.chain(stocks)
    }

    pub(crate) fn open_instances(&self) -> Vec<String> {
        let regs = self
            .current_registration_appl
            .iter()
            .filter(|(_, a)| a.under_review)
            .map(|(addr, _)| format!("registration of {}", addr.short()));
        let refills = self
            .current_refill_appl
            .iter()
            .filter(|(_, a)| a.under_process)
            .map(|(addr, _)| format!("refill of {}", addr.short()));
        regs.chain(refills).collect()
    }

    pub(crate) fn stamps_ok(&self) -> bool {
        self.current_registration_appl.values().all(|a| stamps_well_ordered(&a.stamps()))
            && self.current_refill_appl.values().all(|a| stamps_well_ordered(&a.stamps()))
    }

    pub(crate) fn stock_accounting_ok(&self) -> bool {
        self.vc_details.values().all(|vc| {
            let Some(stock) = vc.current_stock_id.and_then(|id| self.vaccine_stocks.get(&id)) else {
                return vc.vials_in_stock == 0 && vc.vials_reserved == 0;
            };
            vc.vials_in_stock == stock.vials_count - stock.vials_used && vc.vials_reserved <= vc.vials_in_stock
        })
    }
}

impl Chain {
    pub fn vc_govt(&self) -> &VcGovtState {
        &self.vc_govt
    }

    pub(crate) fn require_vc(&self, caller: PartyAddress) -> ContractResult<VcId> {
        self.vc_govt.vc_id_of(&caller).ok_or(ContractError::Unauthorized("caller is not a registered VC"))
    }

    fn open_registration(&self, vc_addr: &PartyAddress) -> ContractResult<&RegAppl> {
        ensure(self.vc_govt.vc_id_of(vc_addr).is_none(), "VC already registered")?;
        match self.vc_govt.current_registration_appl.get(vc_addr) {
            Some(appl) if appl.under_review => Ok(appl),
            _ => Err(ContractError::GuardFailed("no registration application under review")),
        }
    }

    pub fn timestamp_reg_appl(&mut self, caller: PartyAddress) -> ContractResult<()> {
        ensure(self.vc_govt.vc_id_of(&caller).is_none(), "VC already registered")?;
        let open = self.vc_govt.current_registration_appl.get(&caller).is_some_and(|a| a.under_review);
        ensure(!open, "registration application already under review")?;
        let now = self.now();
        let appl = RegAppl { under_review: true, t_reg_appl: Some(now), ..RegAppl::default() };
        self.vc_govt.current_registration_appl.insert(caller, appl);
        self.emit(caller, "timestamp_reg_appl", &json!({ "vc": caller, "t": now }));
        Ok(())
    }

    pub fn reg_appl_hash(&mut self, caller: PartyAddress, vc_addr: PartyAddress, appl_digest: Digest) -> ContractResult<()> {
        self.require_govt(caller)?;
        let appl = self.open_registration(&vc_addr)?;
        let t_reg = appl.t_reg_appl.ok_or(ContractError::GuardFailed("application not timestamped"))?;
        ensure(appl.t_hash_appl.is_none(), "application already hashed")?;
        self.within(t_reg, self.config.timeouts.vc_govt)?;
        let now = self.now();
        let appl = self.vc_govt.current_registration_appl.get_mut(&vc_addr).expect("checked above");
        appl.hash = Some(appl_digest);
        appl.t_hash_appl = Some(now);
        self.emit(caller, "reg_appl_hash", &json!({ "vc": vc_addr, "hash": appl_digest }));
        Ok(())
    }

    pub fn decide_on_acceptance_hash(&mut self, caller: PartyAddress, decision: bool) -> ContractResult<Option<u64>> {
        let appl = self.open_registration(&caller)?;
        let t_hash = appl.t_hash_appl.ok_or(ContractError::GuardFailed("application not hashed yet"))?;
        ensure(appl.t_decide_on_hash.is_none(), "hash already decided")?;
        self.within(t_hash, self.config.timeouts.vc_govt)?;
        let now = self.now();
        let id = decision.then(|| {
            self.vc_govt.next_reg_appl_id += 1;
            self.vc_govt.next_reg_appl_id
        });
        let appl = self.vc_govt.current_registration_appl.get_mut(&caller).expect("checked above");
        appl.t_decide_on_hash = Some(now);
        appl.decision = decision;
        if let Some(id) = id {
            appl.reg_appl_id = Some(id);
            self.vc_govt.reg_appl_belongs_to.insert(id, caller);
        } else {
            appl.under_review = false;
            appl.closure = Some(Closure::Declined { by: Role::Vc });
        }
        self.emit(caller, "decide_on_acceptance_hash", &json!({ "decision": decision, "reg_appl_id": id }));
        Ok(id)
    }

    pub fn decide_on_acceptance_reg_appl(
        &mut self,
        caller: PartyAddress,
        reg_appl_id: u64,
        decision: bool,
    ) -> ContractResult<Option<VcId>> {
        self.require_govt(caller)?;
        let vc_addr = *self
            .vc_govt
            .reg_appl_belongs_to
            .get(&reg_appl_id)
            .ok_or(ContractError::GuardFailed("unknown registration application id"))?;
        let appl = self.open_registration(&vc_addr)?;
        ensure(appl.reg_appl_id == Some(reg_appl_id), "registration application id is stale")?;
        let t_doh = appl.t_decide_on_hash.ok_or(ContractError::GuardFailed("hash not accepted yet"))?;
        ensure(appl.t_decide_on_appl.is_none(), "application already decided")?;
        self.within(t_doh, self.config.timeouts.vc_govt)?;
        let now = self.now();
        let vc_id = decision.then(|| {
            self.vc_govt.next_vc_id += 1;
            VcId(self.vc_govt.next_vc_id)
        });
        if let Some(vc_id) = vc_id {
            self.vc_govt.vc_addr_to_vc_id.insert(vc_addr, vc_id);
            self.vc_govt.vc_details.insert(
                vc_id,
                VcRecord {
                    vc_id,
                    address: vc_addr,
                    current_stock_id: None,
                    vials_in_stock: 0,
                    vials_reserved: 0,
                    money_earned: 0,
                    doses_administered: 0,
                },
            );
        }
        let appl = self.vc_govt.current_registration_appl.get_mut(&vc_addr).expect("checked above");
        appl.under_review = false;
        appl.t_decide_on_appl = Some(now);
        appl.closure = Some(if decision { Closure::Completed } else { Closure::Declined { by: Role::Govt } });
        self.emit(caller, "decide_on_acceptance_reg_appl", &json!({ "reg_appl_id": reg_appl_id, "decision": decision, "vc_id": vc_id }));
        Ok(vc_id)
    }

    /// Closes a registration whose responsible party let its window lapse.
    /// Callable only by the party left waiting.
    pub fn expire_registration(&mut self, caller: PartyAddress, vc_addr: PartyAddress) -> ContractResult<()> {
        let appl = self.open_registration(&vc_addr)?;
        let (silent, since) = match (appl.t_reg_appl, appl.t_hash_appl, appl.t_decide_on_hash) {
            (_, _, Some(t)) => (Role::Govt, t),
            (_, Some(t), None) => (Role::Vc, t),
            (Some(t), None, None) => (Role::Govt, t),
            (None, None, None) => return Err(ContractError::GuardFailed("application not timestamped")),
        };
        let waiting = if silent == Role::Govt { vc_addr } else { self.govt };
        if caller != waiting {
            return Err(ContractError::Unauthorized("only the waiting party may claim a timeout"));
        }
        self.require_expired(since, self.config.timeouts.vc_govt)?;
        let appl = self.vc_govt.current_registration_appl.get_mut(&vc_addr).expect("checked above");
        appl.under_review = false;
        appl.closure = Some(Closure::TimedOut { silent });
        self.emit(caller, "expire_registration", &json!({ "vc": vc_addr, "silent": silent }));
        Ok(())
    }

    fn open_refill(&self, vc_addr: &PartyAddress) -> ContractResult<&ReStockAppl> {
        match self.vc_govt.current_refill_appl.get(vc_addr) {
            Some(appl) if appl.under_process => Ok(appl),
            _ => Err(ContractError::GuardFailed("no refill application under process")),
        }
    }

    pub fn refill_stock_appl(&mut self, caller: PartyAddress) -> ContractResult<u64> {
        let vc_id = self.require_vc(caller)?;
        ensure(self.vc_govt.vc_details[&vc_id].vials_in_stock == 0, "VC still has vials in stock")?;
        ensure(self.open_refill(&caller).is_err(), "refill application already under process")?;
        self.vc_govt.next_refill_appl_id += 1;
        let id = self.vc_govt.next_refill_appl_id;
        let now = self.now();
        let appl = ReStockAppl {
            refill_appl_id: id,
            t_refill_appl: Some(now),
            under_process: true,
            ..ReStockAppl::default()
        };
        self.vc_govt.current_refill_appl.insert(caller, appl);
        self.emit(caller, "refill_stock_appl", &json!({ "refill_appl_id": id }));
        Ok(id)
    }

    pub fn commit_vaccine_set(
        &mut self,
        caller: PartyAddress,
        vc_addr: PartyAddress,
        vials_count: u64,
        mr: Digest,
        locked: Amount,
    ) -> ContractResult<()> {
        self.require_govt(caller)?;
        ensure(self.vc_govt.vc_id_of(&vc_addr).is_some(), "VC is not registered")?;
        ensure(vials_count > 0, "vials count must be positive")?;
        let appl = self.open_refill(&vc_addr)?;
        let t_refill = appl.t_refill_appl.ok_or(ContractError::GuardFailed("refill application not timestamped"))?;
        ensure(appl.t_commitment.is_none(), "vaccine set already committed")?;
        self.within(t_refill, self.config.timeouts.vc_govt)?;
        let charge = self.config.service_charge_per_vial;
        ensure(charge.checked_mul(vials_count) == Some(locked), "incorrect service charge locked")?;
        let balance = self.ledger.balance(&caller);
        if balance < locked {
            return Err(LedgerError::InsufficientFunds { balance, needed: locked }.into());
        }
        let escrows = (0..vials_count)
            .map(|_| self.ledger.lock_funds(caller, charge, "service-charge"))
            .collect::<Result<Vec<_>, _>>()?;
        let now = self.now();
        let appl = self.vc_govt.current_refill_appl.get_mut(&vc_addr).expect("checked above");
        appl.vials_count = vials_count;
        appl.commitment = Some(mr);
        appl.t_commitment = Some(now);
        appl.service_escrows = escrows;
        self.emit(caller, "commit_vaccine_set", &json!({ "vc": vc_addr, "vials_count": vials_count, "mr": mr, "locked": locked }));
        Ok(())
    }

    pub fn decide_on_acceptance_vaccine_set(&mut self, caller: PartyAddress, decision: bool) -> ContractResult<Option<StockId>> {
        let vc_id = self.require_vc(caller)?;
        let appl = self.open_refill(&caller)?;
        let t_commit = appl.t_commitment.ok_or(ContractError::GuardFailed("vaccine set not committed yet"))?;
        ensure(appl.t_accept_vaccine_set.is_none(), "vaccine set already decided")?;
        self.within(t_commit, self.config.timeouts.vc_govt)?;
        let now = self.now();
        let govt = self.govt;
        let appl = self.vc_govt.current_refill_appl.get_mut(&caller).expect("checked above");
        appl.t_accept_vaccine_set = Some(now);
        appl.under_process = false;
        let escrows = std::mem::take(&mut appl.service_escrows);
        let stock_id = if decision {
            appl.closure = Some(Closure::Completed);
            let (vials_count, stock_mr) = (appl.vials_count, appl.commitment.expect("committed"));
            self.vc_govt.next_stock_id += 1;
            let stock_id = StockId(self.vc_govt.next_stock_id);
            self.vc_govt.vaccine_stocks.insert(
                stock_id,
                VaccineStock {
                    stock_id,
                    owner: vc_id,
                    vials_count,
                    stock_mr,
                    vials_used: 0,
                    pending_charges: escrows.into(),
                },
            );
            let vc = self.vc_govt.vc_details.get_mut(&vc_id).expect("registered");
            vc.vials_in_stock = vials_count;
            vc.current_stock_id = Some(stock_id);
            Some(stock_id)
        } else {
            appl.closure = Some(Closure::Declined { by: Role::Vc });
            for id in escrows {
                self.ledger.release_funds(id, govt)?;
            }
            None
        };
        self.emit(caller, "decide_on_acceptance_vaccine_set", &json!({ "decision": decision, "stock_id": stock_id }));
        Ok(stock_id)
    }

    /// Government recovers the service charge when the VC never answers the
    /// committed vaccine set.
    pub fn take_away_locked_money(&mut self, caller: PartyAddress, vc_addr: PartyAddress) -> ContractResult<()> {
        self.require_govt(caller)?;
        ensure(self.vc_govt.vc_id_of(&vc_addr).is_some(), "VC is not registered")?;
        let appl = self.open_refill(&vc_addr)?;
        let t_commit = appl.t_commitment.ok_or(ContractError::GuardFailed("vaccine set not committed yet"))?;
        ensure(appl.t_accept_vaccine_set.is_none(), "vaccine set already decided")?;
        self.require_expired(t_commit, self.config.timeouts.vc_govt)?;
        let appl = self.vc_govt.current_refill_appl.get_mut(&vc_addr).expect("checked above");
        appl.under_process = false;
        appl.closure = Some(Closure::TimedOut { silent: Role::Vc });
        let escrows = std::mem::take(&mut appl.service_escrows);
        let mut recovered = 0;
        for id in escrows {
            recovered += self.ledger.release_funds(id, caller)?;
        }
        self.emit(caller, "take_away_locked_money", &json!({ "vc": vc_addr, "recovered": recovered }));
        Ok(())
    }

    /// VC closes a refill application the government never committed to.
    pub fn expire_refill_appl(&mut self, caller: PartyAddress) -> ContractResult<()> {
        self.require_vc(caller)?;
        let appl = self.open_refill(&caller)?;
        ensure(appl.t_commitment.is_none(), "vaccine set committed; only the government may exit now")?;
        let t_refill = appl.t_refill_appl.ok_or(ContractError::GuardFailed("refill application not timestamped"))?;
        self.require_expired(t_refill, self.config.timeouts.vc_govt)?;
        let appl = self.vc_govt.current_refill_appl.get_mut(&caller).expect("checked above");
        appl.under_process = false;
        appl.closure = Some(Closure::TimedOut { silent: Role::Govt });
        let id = appl.refill_appl_id;
        self.emit(caller, "expire_refill_appl", &json!({ "refill_appl_id": id }));
        Ok(())
    }

    /// Returns every still-locked service charge to the government. Meant for
    /// the end of a run; vials already in stock stay with their VC unpaid.
    pub fn sweep_service_charges(&mut self) -> Amount {
        let govt = self.govt;
        let pending: Vec<EscrowId> = self
            .vc_govt
            .vaccine_stocks
            .values_mut()
            .flat_map(|s| std::mem::take(&mut s.pending_charges))
            .collect();
        let mut total = 0;
        for id in pending {
            total += self.ledger.release_funds(id, govt).expect("pending charges are live escrows");
        }
        if total > 0 {
            self.emit(govt, "sweep_service_charges", &json!({ "returned": total }));
        }
        total
    }

    pub(crate) fn reserve_vial(&mut self, vc_id: VcId) {
        self.vc_govt.vc_details.get_mut(&vc_id).expect("registered").vials_reserved += 1;
    }

    pub(crate) fn unreserve_vial(&mut self, vc_id: VcId) {
        self.vc_govt.vc_details.get_mut(&vc_id).expect("registered").vials_reserved -= 1;
    }

    /// Consumes one reserved vial of `stock_id` and pays its service charge
    /// to the VC. Returns the amount paid.
    pub(crate) fn consume_vial(&mut self, vc_id: VcId, stock_id: StockId) -> ContractResult<Amount> {
        let stock = self.vc_govt.vaccine_stocks.get_mut(&stock_id).expect("stock recorded");
        stock.vials_used += 1;
        let charge = stock.pending_charges.pop_front();
        let vc = self.vc_govt.vc_details.get_mut(&vc_id).expect("registered");
        vc.vials_in_stock -= 1;
        vc.vials_reserved -= 1;
        vc.doses_administered += 1;
        let to = vc.address;
        let paid = match charge {
            Some(id) => self.ledger.release_funds(id, to)?,
            None => 0,
        };
        self.vc_govt.vc_details.get_mut(&vc_id).expect("registered").money_earned += paid;
        Ok(paid)
    }
}
