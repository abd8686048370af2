//! Protocol steps and the composite flows built from them.

use std::collections::BTreeSet;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{protocol_err, ActorError, Behavior, MessageKind, StepResult, VpDocument, World};
use crate::chain::{Role, VcId};
use crate::contracts::c_govt::VpRecord;
use crate::contracts::c_vc::{InjectingProtocol, VialState};
use crate::crypto::{
    hash, merkle_verify, pre_decrypt, pre_encrypt, pre_reencrypt, pre_rekey, Ciphertext, CryptoError, MerkleProof, MerkleTree,
    ReEncryptionKey,
};
use crate::ledger::PartyAddress;

/// Which protocol a timeout claim is about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutTarget {
    Registration,
    Refill,
    Token,
    Injection,
    Vp,
    Verification,
}

impl fmt::Display for TimeoutTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

fn decision(v: &Value) -> bool {
    v["decision"].as_bool().unwrap_or(false)
}

fn parse_proof(bytes: &[u8]) -> Result<MerkleProof, ActorError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CryptoError::Decode(e.to_string()))?;
    Ok(MerkleProof::from_lines(text)?)
}

impl World {
    fn govt_addr(&self) -> PartyAddress {
        self.actors[self.govt].address
    }

    fn as_govt<F>(&mut self, op: &str, f: F) -> StepResult
    where
        F: FnOnce(&mut Self) -> StepResult,
    {
        let name = self.actors[self.govt].name.clone();
        self.traced(&name, op, f)
    }

    fn party(&self, name: &str, role: Role) -> Result<(usize, PartyAddress), ActorError> {
        let i = self.role_idx(name, role)?;
        Ok((i, self.actors[i].address))
    }

    fn vc_id_for(&self, vc_addr: &PartyAddress) -> VcId {
        self.chain.vc_govt().vc_id_of(vc_addr).unwrap_or_default()
    }

    fn injection(&self, c: &PartyAddress) -> Result<InjectingProtocol, ActorError> {
        self.chain.c_vc().current(c).cloned().ok_or_else(|| protocol_err("no injection protocol for citizen"))
    }

    pub(super) fn latest_injection(&self, c: &PartyAddress) -> Option<&InjectingProtocol> {
        let token = self.chain.c_govt().token_of(c)?;
        self.chain.c_vc().latest_for_token(token)
    }

    fn vc_addr_of(&self, vc_id: VcId) -> Result<PartyAddress, ActorError> {
        self.chain.vc_govt().vc(vc_id).map(|v| v.address).ok_or_else(|| protocol_err("unknown VC"))
    }

    fn expect_msg(&mut self, from: PartyAddress, to: PartyAddress, kind: MessageKind, what: &str) -> Result<Vec<u8>, ActorError> {
        self.network
            .receive(from, to, kind)
            .map(|m| m.payload)
            .ok_or_else(|| protocol_err(format!("no {what} received")))
    }

    fn vf_protocol_id(&self, c: &PartyAddress, f: &PartyAddress) -> u64 {
        self.chain.c_vf().open_between(c, f).map_or(0, |p| p.vf_protocol_id)
    }

    // VC registration.

    pub fn reg_apply(&mut self, vc: &str) -> StepResult {
        self.traced(vc, "reg_apply", |w| {
            let (i, v) = w.party(vc, Role::Vc)?;
            w.chain.timestamp_reg_appl(v)?;
            let application = format!("registration application for vaccination center {v}").into_bytes();
            w.actors[i].vc.application = application.clone();
            w.network.send(v, w.govt_addr(), MessageKind::Application, application);
            Ok(Value::Null)
        })
    }

    pub fn reg_hash(&mut self, vc: &str) -> StepResult {
        self.as_govt("reg_hash", |w| {
            let (_, v) = w.party(vc, Role::Vc)?;
            let g = w.govt_addr();
            let application = w.expect_msg(v, g, MessageKind::Application, "registration application")?;
            let digest = hash(&application);
            w.chain.reg_appl_hash(g, v, digest)?;
            Ok(json!({ "hash": digest }))
        })
    }

    pub fn reg_confirm_hash(&mut self, vc: &str, overridden: Option<bool>) -> StepResult {
        self.traced(vc, "reg_confirm_hash", |w| {
            let (i, v) = w.party(vc, Role::Vc)?;
            let on_chain = w.chain.vc_govt().registration(&v).and_then(|r| r.hash);
            let d = overridden.unwrap_or(on_chain == Some(hash(&w.actors[i].vc.application)));
            let reg_appl_id = w.chain.decide_on_acceptance_hash(v, d)?;
            Ok(json!({ "decision": d, "reg_appl_id": reg_appl_id }))
        })
    }

    pub fn reg_decide(&mut self, vc: &str, overridden: Option<bool>) -> StepResult {
        self.as_govt("reg_decide", |w| {
            let (_, v) = w.party(vc, Role::Vc)?;
            let id = w.chain.vc_govt().registration(&v).and_then(|r| r.reg_appl_id).unwrap_or(0);
            let d = overridden.unwrap_or(true);
            let vc_id = w.chain.decide_on_acceptance_reg_appl(w.govt_addr(), id, d)?;
            Ok(json!({ "decision": d, "vc_id": vc_id }))
        })
    }

    // Stock refill.

    pub fn refill_request(&mut self, vc: &str) -> StepResult {
        self.traced(vc, "refill_request", |w| {
            let (_, v) = w.party(vc, Role::Vc)?;
            let id = w.chain.refill_stock_appl(v)?;
            Ok(json!({ "refill_appl_id": id }))
        })
    }

    /// Govt generates `vials` fresh vial ids, commits their Merkle root and
    /// ships the set off-chain.
    pub fn govt_dispatch_stock(&mut self, vc: &str, vials: u64) -> StepResult {
        self.as_govt("govt_dispatch_stock", |w| {
            let (_, v) = w.party(vc, Role::Vc)?;
            let (gi, g) = (w.govt, w.govt_addr());
            w.actors[gi].govt.dispatch_seq += 1;
            let seq = w.actors[gi].govt.dispatch_seq;
            let ids: Vec<Vec<u8>> =
                (1..=vials).map(|i| format!("VX{seq:02}-{i:04}-{:06x}", w.rng.next_u32() & 0xff_ffff).into_bytes()).collect();
            let tree = MerkleTree::build(ids.clone())?;
            let committed = if w.actors[gi].behavior == Behavior::WrongMr {
                let mut other = ids.clone();
                if let Some(last) = other.last_mut() {
                    last.extend_from_slice(b"-X");
                }
                MerkleTree::build(other)?.root()
            } else {
                tree.root()
            };
            let charge = w.chain.config().service_charge_per_vial * vials;
            w.chain.commit_vaccine_set(g, v, vials, committed, charge)?;
            w.network.send(g, v, MessageKind::VialHandover, ids.join(&b'\n'));
            w.actors[gi].govt.dispatched.entry(v).or_default().push(tree);
            Ok(json!({ "vials": vials, "mr": committed }))
        })
    }

    /// VC rebuilds the tree over the vials it received and accepts when the
    /// root matches the on-chain commitment.
    pub fn stock_accept(&mut self, vc: &str, overridden: Option<bool>) -> StepResult {
        self.traced(vc, "stock_accept", |w| {
            let (i, v) = w.party(vc, Role::Vc)?;
            let payload = w.expect_msg(w.govt_addr(), v, MessageKind::VialHandover, "vial set")?;
            let tree = MerkleTree::build(payload.split(|&b| b == b'\n').map(<[u8]>::to_vec))?;
            let committed = w.chain.vc_govt().refill(&v).and_then(|r| r.commitment);
            let d = overridden.unwrap_or(committed == Some(tree.root()));
            let stock_id = w.chain.decide_on_acceptance_vaccine_set(v, d)?;
            if stock_id.is_some() {
                w.actors[i].vc.stock = Some(tree);
            }
            Ok(json!({ "decision": d, "stock_id": stock_id }))
        })
    }

    // Citizen token.

    pub fn token_request(&mut self, citizen: &str) -> StepResult {
        self.traced(citizen, "token_request", |w| {
            let (i, c) = w.party(citizen, Role::Citizen)?;
            let pii = w.actors[i].pii.clone().ok_or_else(|| protocol_err("citizen has no personal data"))?;
            let id = w.chain.appl_for_token_id(c, hash(&pii.canonical()))?;
            let mut sent = pii;
            if w.actors[i].behavior == Behavior::PiiTamper {
                sent.dob.push_str("-01");
            }
            w.network.send(c, w.govt_addr(), MessageKind::Application, sent.canonical());
            Ok(json!({ "token_appl_id": id }))
        })
    }

    /// Govt hashes the personal data it received and compares it with the
    /// committed digest. The data itself is dropped afterwards.
    pub fn token_review(&mut self, citizen: &str, overridden: Option<bool>) -> StepResult {
        self.as_govt("token_review", |w| {
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let g = w.govt_addr();
            let appl = w.chain.c_govt().open_token_appl_of(&c).map(|a| (a.token_appl_id, a.citizen_info_digest));
            let pii = w.expect_msg(c, g, MessageKind::Application, "personal data")?;
            let d = overridden.unwrap_or(appl.is_some_and(|(_, digest)| digest == hash(&pii)));
            let token_id = w.chain.verify_appl(g, appl.map_or(0, |a| a.0), d)?;
            Ok(json!({ "decision": d, "token_id": token_id }))
        })
    }

    // Injection.

    pub fn inj_begin(&mut self, citizen: &str, vc: &str) -> StepResult {
        self.traced(citizen, "inj_begin", |w| {
            let (i, c) = w.party(citizen, Role::Citizen)?;
            let (_, v) = w.party(vc, Role::Vc)?;
            let vc_id = w.vc_id_for(&v);
            let id = w.chain.begin_protocol(c, vc_id)?;
            w.actors[i].citizen = Default::default();
            Ok(json!({ "protocol_id": id, "vc_id": vc_id }))
        })
    }

    pub fn inj_lock_vc(&mut self, vc: &str, citizen: &str) -> StepResult {
        self.traced(vc, "inj_lock_vc", |w| {
            let (_, v) = w.party(vc, Role::Vc)?;
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let amount = w.chain.config().deposits.injection;
            w.chain.lock_money_by_vc(v, c, amount)?;
            Ok(json!({ "locked": amount }))
        })
    }

    pub fn inj_lock_c(&mut self, citizen: &str) -> StepResult {
        self.traced(citizen, "inj_lock_c", |w| {
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let vc_id = w.injection(&c)?.vc_id;
            let amount = w.chain.config().deposits.injection;
            w.chain.lock_money_by_c(c, vc_id, amount)?;
            Ok(json!({ "locked": amount }))
        })
    }

    /// Lowest unused vial of the current stock, unless the VC misbehaves.
    fn pick_vial(&self, vi: usize, citizen: PartyAddress) -> Result<(Vec<u8>, MerkleProof), ActorError> {
        let a = &self.actors[vi];
        let tree = a.vc.stock.as_ref().ok_or_else(|| protocol_err("no accepted vaccine stock"))?;
        if a.behavior == Behavior::WrongProof {
            let fake: Vec<Vec<u8>> = (1..=tree.len().max(2)).map(|i| format!("counterfeit-{i:04}").into_bytes()).collect();
            let fake = MerkleTree::build(fake)?;
            let vial = fake.leaves()[0].clone();
            let proof = fake.prove(&vial)?;
            return Ok((vial, proof));
        }
        let cvc = self.chain.c_vc();
        let state = |v: &[u8]| cvc.vial_state(&hash(v));
        let held: BTreeSet<&[u8]> = a
            .vc
            .sessions
            .iter()
            .filter(|(c, _)| **c != citizen && cvc.current(c).is_some_and(|p| p.under_process))
            .map(|(_, (v, _))| v.as_slice())
            .collect();
        let free = tree.leaves().iter().find(|v| state(v) == VialState::Unused && !held.contains(v.as_slice()));
        let vial = match a.behavior {
            Behavior::ReuseVial => tree.leaves().iter().find(|v| state(v) == VialState::Used).or(free),
            _ => free,
        };
        let vial = vial.ok_or_else(|| protocol_err("no unused vial in stock"))?.clone();
        let proof = tree.prove(&vial)?;
        Ok((vial, proof))
    }

    pub fn inj_commit_proof(&mut self, vc: &str, citizen: &str) -> StepResult {
        self.traced(vc, "inj_commit_proof", |w| {
            let (vi, v) = w.party(vc, Role::Vc)?;
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let (vial, proof) = w.pick_vial(vi, c)?;
            let commitment = proof.commitment();
            w.chain.commit_mt_proof(v, c, commitment)?;
            w.network.send(v, c, MessageKind::MerkleProof, proof.to_lines().into_bytes());
            w.actors[vi].vc.sessions.insert(c, (vial, proof));
            Ok(json!({ "commit_mt_proof": commitment }))
        })
    }

    pub fn inj_consent1(&mut self, citizen: &str, overridden: Option<bool>) -> StepResult {
        self.traced(citizen, "inj_consent1", |w| {
            let (i, c) = w.party(citizen, Role::Citizen)?;
            let p = w.injection(&c)?;
            let v = w.vc_addr_of(p.vc_id)?;
            let proof = parse_proof(&w.expect_msg(v, c, MessageKind::MerkleProof, "membership proof")?)?;
            let d = overridden.unwrap_or(p.commit_mt_proof == Some(proof.commitment()));
            w.actors[i].citizen.proof = Some(proof);
            w.chain.provide_consent1(c, p.vc_id, d)?;
            Ok(json!({ "decision": d }))
        })
    }

    pub fn inj_commit_vial(&mut self, vc: &str, citizen: &str) -> StepResult {
        self.traced(vc, "inj_commit_vial", |w| {
            let (vi, v) = w.party(vc, Role::Vc)?;
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let (vial, _) = w.actors[vi].vc.sessions.get(&c).cloned().ok_or_else(|| protocol_err("no vial picked for citizen"))?;
            let commit_vid = hash(&vial);
            w.chain.commit_vial_id(v, c, commit_vid)?;
            w.network.send(v, c, MessageKind::VialHandover, vial);
            Ok(json!({ "commit_vid": commit_vid }))
        })
    }

    pub fn inj_consent2(&mut self, citizen: &str, overridden: Option<bool>) -> StepResult {
        self.traced(citizen, "inj_consent2", |w| {
            let (i, c) = w.party(citizen, Role::Citizen)?;
            let p = w.injection(&c)?;
            let v = w.vc_addr_of(p.vc_id)?;
            let vial = w.expect_msg(v, c, MessageKind::VialHandover, "vial")?;
            let leaf_ok = w.actors[i].citizen.proof.as_ref().is_some_and(|pr| pr.leaf == vial);
            let d = overridden.unwrap_or(leaf_ok && p.commit_vid == Some(hash(&vial)));
            w.actors[i].citizen.vial = Some(vial);
            w.chain.provide_consent2(c, p.vc_id, d)?;
            Ok(json!({ "decision": d }))
        })
    }

    /// Citizen folds the proof it holds and compares with the stock root.
    pub fn inj_consent3(&mut self, citizen: &str, overridden: Option<bool>) -> StepResult {
        self.traced(citizen, "inj_consent3", |w| {
            let (i, c) = w.party(citizen, Role::Citizen)?;
            let p = w.injection(&c)?;
            let root = p.stock_id.and_then(|s| w.chain.vc_govt().stock(s)).map(|s| s.stock_mr);
            let member = match (&w.actors[i].citizen.proof, root) {
                (Some(proof), Some(root)) => merkle_verify(proof, &root),
                _ => false,
            };
            let d = overridden.unwrap_or(member);
            w.chain.provide_consent3(c, p.vc_id, d)?;
            Ok(json!({ "decision": d }))
        })
    }

    pub fn inj_reveal(&mut self, vc: &str, citizen: &str) -> StepResult {
        self.traced(vc, "inj_reveal", |w| {
            let (vi, v) = w.party(vc, Role::Vc)?;
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let (_, proof) = w.actors[vi].vc.sessions.get(&c).cloned().ok_or_else(|| protocol_err("no proof to reveal"))?;
            let verdict = w.chain.adjudicate_dispute(v, c, &proof)?;
            w.actors[vi].vc.sessions.remove(&c);
            Ok(serde_json::to_value(verdict).expect("plain struct"))
        })
    }

    pub fn inj_vaccinate(&mut self, vc: &str, citizen: &str) -> StepResult {
        self.traced(vc, "inj_vaccinate", |w| {
            let (vi, v) = w.party(vc, Role::Vc)?;
            let (_, c) = w.party(citizen, Role::Citizen)?;
            w.chain.register_vax_timestamp(v, c)?;
            w.actors[vi].vc.sessions.remove(&c);
            Ok(json!({ "t_vaccination": w.chain.now() }))
        })
    }

    pub fn inj_acknowledge(&mut self, citizen: &str, overridden: Option<bool>) -> StepResult {
        self.traced(citizen, "inj_acknowledge", |w| {
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let vc_id = w.injection(&c)?.vc_id;
            let d = overridden.unwrap_or(true);
            w.chain.acknowledge_vaccination(c, vc_id, d)?;
            Ok(json!({ "decision": d }))
        })
    }

    // Vaccine passport.

    pub fn vp_apply(&mut self, citizen: &str) -> StepResult {
        self.traced(citizen, "vp_apply", |w| {
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let amount = w.chain.config().deposits.vp;
            let id = w.chain.initiate_vp_appl_and_lock_money(c, amount)?;
            Ok(json!({ "vp_appl_id": id, "locked": amount }))
        })
    }

    pub fn vp_lock_govt(&mut self, citizen: &str) -> StepResult {
        self.as_govt("vp_lock_govt", |w| {
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let amount = w.chain.config().deposits.vp;
            w.chain.lock_money_by_govt(w.govt_addr(), c, amount)?;
            Ok(json!({ "locked": amount }))
        })
    }

    /// Citizen discloses its vial id on-chain and hands the membership proof
    /// to the government off-chain.
    pub fn vp_send_proof(&mut self, citizen: &str) -> StepResult {
        self.traced(citizen, "vp_send_proof", |w| {
            let (i, c) = w.party(citizen, Role::Citizen)?;
            let proof = w.actors[i].citizen.proof.clone().ok_or_else(|| protocol_err("citizen holds no vaccination proof"))?;
            w.chain.send_vaccination_proof(c, &proof.leaf, proof.commitment())?;
            w.network.send(c, w.govt_addr(), MessageKind::VpRequest, proof.to_lines().into_bytes());
            Ok(Value::Null)
        })
    }

    pub fn vp_consent1(&mut self, citizen: &str, overridden: Option<bool>) -> StepResult {
        self.as_govt("vp_consent1", |w| {
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let g = w.govt_addr();
            let proof = parse_proof(&w.expect_msg(c, g, MessageKind::VpRequest, "vaccination proof")?)?;
            let matches = w
                .latest_injection(&c)
                .is_some_and(|p| p.t_vaccination.is_some() && p.commit_vid == Some(hash(&proof.leaf)));
            let d = overridden.unwrap_or(matches);
            let gi = w.govt;
            w.actors[gi].govt.vp_proofs.insert(c, proof);
            w.chain.send_consent1(g, c, d)?;
            Ok(json!({ "decision": d }))
        })
    }

    pub fn vp_consent2(&mut self, citizen: &str, overridden: Option<bool>) -> StepResult {
        self.as_govt("vp_consent2", |w| {
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let root = w.latest_injection(&c).and_then(|p| p.stock_id).and_then(|s| w.chain.vc_govt().stock(s)).map(|s| s.stock_mr);
            let member = match (w.actors[w.govt].govt.vp_proofs.get(&c), root) {
                (Some(proof), Some(root)) => merkle_verify(proof, &root),
                _ => false,
            };
            let d = overridden.unwrap_or(member);
            w.chain.send_consent2(w.govt_addr(), c, d)?;
            Ok(json!({ "decision": d }))
        })
    }

    pub fn vp_reveal(&mut self, citizen: &str) -> StepResult {
        self.as_govt("vp_reveal", |w| {
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let proof = w.actors[w.govt].govt.vp_proofs.get(&c).cloned().ok_or_else(|| protocol_err("no proof to reveal"))?;
            let valid = w.chain.submit_dissent_proof(w.govt_addr(), c, &proof)?;
            Ok(json!({ "proof_valid": valid }))
        })
    }

    /// Builds the passport, signs its digest, encrypts it to the citizen,
    /// stores the ciphertext and uploads the on-chain triple.
    pub fn govt_issue_vp(&mut self, citizen: &str) -> StepResult {
        self.as_govt("govt_issue_vp", |w| {
            let (ci, c) = w.party(citizen, Role::Citizen)?;
            let gi = w.govt;
            let token_id = w.chain.c_govt().token_of(&c).ok_or_else(|| protocol_err("citizen has no token"))?;
            let injection = w.latest_injection(&c).cloned().ok_or_else(|| protocol_err("no injection on record"))?;
            let proof = w.actors[gi].govt.vp_proofs.get(&c).ok_or_else(|| protocol_err("no vaccination proof received"))?;
            let doc = VpDocument {
                token_id,
                vial_id: String::from_utf8_lossy(&proof.leaf).into_owned(),
                vc_id: injection.vc_id,
                vaccination_time: injection.t_vaccination.unwrap_or_default(),
                vaccine_name: w.vaccine.name.clone(),
                target_disease: w.vaccine.target_disease.clone(),
            };
            let signed = if w.actors[gi].behavior == Behavior::ForgedMd {
                VpDocument { vaccine_name: format!("{} booster", doc.vaccine_name), ..doc.clone() }
            } else {
                doc.clone()
            };
            let md_vp = hash(&signed.canonical_bytes());
            let sigma = w.actors[gi].signing.sign(md_vp.as_bytes());
            let citizen_pk = *w.actors[ci].pre.public();
            let ct = pre_encrypt(&citizen_pk, &doc.canonical_bytes(), &mut w.rng);
            let c_id = w.cas.put(&ct.to_bytes())?;
            w.chain.upload_vp_info_and_get_payment(w.govt_addr(), c, md_vp, sigma, c_id)?;
            Ok(json!({ "md_vp": md_vp, "c_id": c_id }))
        })
    }

    // Verification.

    pub fn vf_request(&mut self, vf: &str, citizen: &str) -> StepResult {
        self.traced(vf, "vf_request", |w| {
            let (fi, f) = w.party(vf, Role::Verifier)?;
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let amount = w.chain.config().deposits.verification;
            let id = w.chain.lock_money_by_vf(f, c, amount)?;
            w.actors[fi].verifier.sessions.insert(c, Default::default());
            Ok(json!({ "vf_protocol_id": id, "locked": amount }))
        })
    }

    fn replayed_rk(&self, victim: &str, f: PartyAddress) -> Result<ReEncryptionKey, ActorError> {
        let va = self.address_of(victim)?;
        let observed: Vec<_> = self.network.history().iter().filter(|m| m.from == va && m.kind == MessageKind::Rekey).collect();
        let pick = observed.iter().rev().find(|m| m.to == f).or(observed.last());
        let msg = pick.ok_or_else(|| protocol_err(format!("no re-encryption key of {victim} observed")))?;
        Ok(ReEncryptionKey::from_bytes(&msg.payload)?)
    }

    pub fn vf_commit_rk(&mut self, citizen: &str, vf: &str) -> StepResult {
        self.traced(citizen, "vf_commit_rk", |w| {
            let (ci, c) = w.party(citizen, Role::Citizen)?;
            let (fi, f) = w.party(vf, Role::Verifier)?;
            let rk = match &w.actors[ci].behavior {
                Behavior::RkReplay { victim } => w.replayed_rk(victim, f)?,
                _ => pre_rekey(&w.actors[ci].pre, w.actors[fi].pre.public()),
            };
            let bytes = rk.to_bytes();
            let id = w.vf_protocol_id(&c, &f);
            let amount = w.chain.config().deposits.verification;
            let commit_rk = hash(&bytes);
            w.chain.lock_money_and_commit_rk(c, id, commit_rk, amount)?;
            w.network.send(c, f, MessageKind::Rekey, bytes);
            Ok(json!({ "commit_rk": commit_rk, "locked": amount }))
        })
    }

    pub fn vf_consent(&mut self, vf: &str, citizen: &str, overridden: Option<bool>) -> StepResult {
        self.traced(vf, "vf_consent", |w| {
            let (fi, f) = w.party(vf, Role::Verifier)?;
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let commit_rk = w.chain.c_vf().open_between(&c, &f).and_then(|p| p.commit_rk);
            let bytes = w.expect_msg(c, f, MessageKind::Rekey, "re-encryption key")?;
            let rk = ReEncryptionKey::from_bytes(&bytes).ok();
            let d = overridden.unwrap_or(rk.is_some() && commit_rk == Some(hash(&bytes)));
            w.actors[fi].verifier.sessions.entry(c).or_default().rk = rk;
            let id = w.vf_protocol_id(&c, &f);
            w.chain.provide_consent(f, id, d)?;
            Ok(json!({ "decision": d }))
        })
    }

    pub fn vf_grant(&mut self, citizen: &str, vf: &str) -> StepResult {
        self.traced(citizen, "vf_grant", |w| {
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let (_, f) = w.party(vf, Role::Verifier)?;
            let id = w.vf_protocol_id(&c, &f);
            w.chain.grant_access_permission(c, id)?;
            Ok(Value::Null)
        })
    }

    pub fn vf_fetch(&mut self, vf: &str, citizen: &str) -> StepResult {
        self.traced(vf, "vf_fetch", |w| {
            let (fi, f) = w.party(vf, Role::Verifier)?;
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let id = w.vf_protocol_id(&c, &f);
            let record = w.chain.fetch_vp_info(f, id)?;
            let c_id = record.c_id;
            w.actors[fi].verifier.sessions.entry(c).or_default().record = Some(record);
            Ok(json!({ "c_id": c_id }))
        })
    }

    /// Re-encrypts the stored passport towards the verifier, decrypts it and
    /// checks digest and signature.
    fn check_vp(&self, fi: usize, rk: &ReEncryptionKey, record: &VpRecord) -> (bool, &'static str) {
        let Ok(blob) = self.cas.get(&record.c_id) else {
            return (false, "passport blob missing");
        };
        let Ok(ct) = Ciphertext::from_bytes(blob) else {
            return (false, "malformed ciphertext");
        };
        let plain = match pre_reencrypt(rk, &ct).and_then(|re| pre_decrypt(&self.actors[fi].pre, &re)) {
            Ok(p) => p,
            Err(_) => return (false, "decryption failed"),
        };
        if hash(&plain) != record.md_vp {
            return (false, "document digest mismatch");
        }
        if !self.chain.govt_key().verify(record.md_vp.as_bytes(), &record.sigma) {
            return (false, "signature invalid");
        }
        (true, "valid")
    }

    pub fn vf_result(&mut self, vf: &str, citizen: &str, overridden: Option<bool>) -> StepResult {
        self.traced(vf, "vf_result", |w| {
            let (fi, f) = w.party(vf, Role::Verifier)?;
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let session = w.actors[fi].verifier.sessions.get(&c).cloned().unwrap_or_default();
            let (valid, reason) = match (&session.rk, &session.record) {
                (Some(rk), Some(record)) => w.check_vp(fi, rk, record),
                _ => (false, "missing key or passport record"),
            };
            let result = overridden.unwrap_or(valid);
            let id = w.vf_protocol_id(&c, &f);
            w.chain.verification_result(f, id, result)?;
            w.actors[fi].verifier.results.push((c, result));
            Ok(json!({ "result": result, "reason": reason }))
        })
    }

    pub fn vf_revoke(&mut self, citizen: &str, vf: &str) -> StepResult {
        self.traced(citizen, "vf_revoke", |w| {
            let (_, c) = w.party(citizen, Role::Citizen)?;
            let (_, f) = w.party(vf, Role::Verifier)?;
            w.chain.revoke_access_permission(c, f)?;
            Ok(Value::Null)
        })
    }

    // Exits.

    /// The waiting party exits a protocol whose counterpart went silent.
    /// `counterpart` names the other side where the caller alone does not
    /// determine the instance.
    pub fn claim_timeout(&mut self, actor: &str, target: TimeoutTarget, counterpart: Option<&str>) -> StepResult {
        self.traced(actor, "claim_timeout", |w| {
            let i = w.idx(actor)?;
            let (me, role) = (w.actors[i].address, w.actors[i].role);
            let other = counterpart.map(|n| w.address_of(n)).transpose()?;
            let other = || other.ok_or_else(|| protocol_err(format!("a {target} timeout claimed by a {role} needs a counterpart")));
            let side = |r: Role| if role == r { Ok(me) } else { other() };
            match target {
                TimeoutTarget::Registration => w.chain.expire_registration(me, side(Role::Vc)?)?,
                TimeoutTarget::Refill if role == Role::Govt => w.chain.take_away_locked_money(me, other()?)?,
                TimeoutTarget::Refill => w.chain.expire_refill_appl(me)?,
                TimeoutTarget::Token => {
                    let c = side(Role::Citizen)?;
                    let id = w.chain.c_govt().open_token_appl_of(&c).map_or(0, |a| a.token_appl_id);
                    w.chain.expire_token_appl(me, id)?
                }
                TimeoutTarget::Injection => w.chain.expire_injection(me, side(Role::Citizen)?)?,
                TimeoutTarget::Vp => w.chain.expire_vp_appl(me, side(Role::Citizen)?)?,
                TimeoutTarget::Verification => {
                    let (c, f) = if role == Role::Citizen { (me, other()?) } else { (other()?, me) };
                    let id = w.vf_protocol_id(&c, &f);
                    w.chain.expire_verification(me, id)?
                }
            }
            Ok(json!({ "protocol": target }))
        })
    }

    // Composite flows.

    pub fn vc_register(&mut self, vc: &str) -> StepResult {
        self.reg_apply(vc)?;
        self.reg_hash(vc)?;
        if !decision(&self.reg_confirm_hash(vc, None)?) {
            return Ok(json!({ "registered": false }));
        }
        self.reg_decide(vc, None)
    }

    pub fn vc_refill(&mut self, vc: &str, vials: u64) -> StepResult {
        self.refill_request(vc)?;
        self.govt_dispatch_stock(vc, vials)?;
        self.stock_accept(vc, None)
    }

    pub fn citizen_obtain_token(&mut self, citizen: &str) -> StepResult {
        self.token_request(citizen)?;
        self.token_review(citizen, None)
    }

    pub fn vc_administer_dose(&mut self, vc: &str, citizen: &str) -> StepResult {
        self.inj_begin(citizen, vc)?;
        self.inj_lock_vc(vc, citizen)?;
        self.inj_lock_c(citizen)?;
        self.inj_commit_proof(vc, citizen)?;
        if !decision(&self.inj_consent1(citizen, None)?) {
            return Ok(json!({ "vaccinated": false, "declined_at": "consent1" }));
        }
        self.inj_commit_vial(vc, citizen)?;
        if !decision(&self.inj_consent2(citizen, None)?) {
            return Ok(json!({ "vaccinated": false, "declined_at": "consent2" }));
        }
        if !decision(&self.inj_consent3(citizen, None)?) {
            let verdict = self.inj_reveal(vc, citizen)?;
            return Ok(json!({ "vaccinated": false, "verdict": verdict }));
        }
        self.inj_vaccinate(vc, citizen)?;
        self.inj_acknowledge(citizen, None)?;
        Ok(json!({ "vaccinated": true }))
    }

    pub fn citizen_obtain_vp(&mut self, citizen: &str) -> StepResult {
        self.vp_apply(citizen)?;
        self.vp_lock_govt(citizen)?;
        self.vp_send_proof(citizen)?;
        if !decision(&self.vp_consent1(citizen, None)?) {
            return Ok(json!({ "issued": false, "declined_at": "consent1" }));
        }
        if !decision(&self.vp_consent2(citizen, None)?) {
            let outcome = self.vp_reveal(citizen)?;
            return Ok(json!({ "issued": false, "dispute": outcome }));
        }
        self.govt_issue_vp(citizen)
    }

    /// Runs the whole verification; `Ok(false)` covers both a negative
    /// result and a verifier that declined the key.
    pub fn verifier_check_vp(&mut self, vf: &str, citizen: &str) -> Result<bool, ActorError> {
        self.vf_request(vf, citizen)?;
        self.vf_commit_rk(citizen, vf)?;
        if !decision(&self.vf_consent(vf, citizen, None)?) {
            return Ok(false);
        }
        self.vf_grant(citizen, vf)?;
        self.vf_fetch(vf, citizen)?;
        let out = self.vf_result(vf, citizen, None)?;
        Ok(out["result"].as_bool().unwrap_or(false))
    }
}
