use crate::chain::{Chain, ChainConfig, StockId, TokenId, VcId};
use crate::crypto::{hash, MerkleTree, SigningKeyPair};
use crate::ledger::{Amount, Ledger, PartyAddress, Tick};

pub const TIMEOUT: Tick = 100;
pub const DISPUTE: Tick = 50;
pub const CHARGE: Amount = 10;
pub const DEPOSIT: Amount = 100;
pub const GENESIS: Amount = 1_000_000;

pub struct Kit {
    pub chain: Chain,
    pub govt_keys: SigningKeyPair,
    pub govt: PartyAddress,
    pub vc: PartyAddress,
    pub vc2: PartyAddress,
    pub c1: PartyAddress,
    pub c2: PartyAddress,
    pub vf: PartyAddress,
    pub vf2: PartyAddress,
}

fn addr(seed: u8) -> PartyAddress {
    PartyAddress::from_public_key(SigningKeyPair::from_seed([seed; 32]).public())
}

impl Kit {
    pub fn new() -> Self {
        let govt_keys = SigningKeyPair::from_seed([1; 32]);
        let govt = PartyAddress::from_public_key(govt_keys.public());
        let (vc, vc2, c1, c2, vf, vf2) = (addr(2), addr(3), addr(4), addr(5), addr(6), addr(7));
        let ledger = Ledger::genesis([govt, vc, vc2, c1, c2, vf, vf2].map(|a| (a, GENESIS)));
        let chain = Chain::new(ChainConfig::default(), *govt_keys.public(), ledger);
        Kit { chain, govt_keys, govt, vc, vc2, c1, c2, vf, vf2 }
    }

    pub fn vial_ids(n: usize) -> Vec<Vec<u8>> {
        (1..=n).map(|i| format!("vial-{i:04}").into_bytes()).collect()
    }

    pub fn tree(&self, n: usize) -> MerkleTree {
        MerkleTree::build(Self::vial_ids(n)).unwrap()
    }

    pub fn register_vc(&mut self, vc: PartyAddress) -> VcId {
        let c = &mut self.chain;
        c.timestamp_reg_appl(vc).unwrap();
        c.reg_appl_hash(self.govt, vc, hash(b"application")).unwrap();
        let id = c.decide_on_acceptance_hash(vc, true).unwrap().unwrap();
        c.decide_on_acceptance_reg_appl(self.govt, id, true).unwrap().unwrap()
    }

    pub fn stock_vc(&mut self, vc: PartyAddress, n: usize) -> StockId {
        let mr = self.tree(n).root();
        let c = &mut self.chain;
        c.refill_stock_appl(vc).unwrap();
        c.commit_vaccine_set(self.govt, vc, n as u64, mr, n as u64 * CHARGE).unwrap();
        c.decide_on_acceptance_vaccine_set(vc, true).unwrap().unwrap()
    }

    pub fn tokenize(&mut self, citizen: PartyAddress) -> TokenId {
        let digest = hash(&citizen.0);
        let id = self.chain.appl_for_token_id(citizen, digest).unwrap();
        self.chain.verify_appl(self.govt, id, true).unwrap().unwrap()
    }

    /// Registered VC with an 8-vial stock and one tokened citizen.
    pub fn ready() -> (Self, VcId) {
        let mut k = Kit::new();
        let vc_id = k.register_vc(k.vc);
        k.stock_vc(k.vc, 8);
        k.tokenize(k.c1);
        k.tokenize(k.c2);
        (k, vc_id)
    }

    /// Runs the injection protocol for `citizen` up to (and including)
    /// `stop_after` steps, using vial number `vial` (1-based).
    pub fn inject(&mut self, citizen: PartyAddress, vc_id: VcId, vial: usize, stop_after: usize) {
        let tree = self.tree(8);
        let vid = &Self::vial_ids(8)[vial - 1];
        let proof = tree.prove(vid).unwrap();
        let vc = self.vc;
        let c = &mut self.chain;
        let steps: Vec<Box<dyn Fn(&mut Chain)>> = vec![
            Box::new(move |c| {
                c.begin_protocol(citizen, vc_id).unwrap();
            }),
            Box::new(move |c| c.lock_money_by_vc(vc, citizen, DEPOSIT).unwrap()),
            Box::new(move |c| c.lock_money_by_c(citizen, vc_id, DEPOSIT).unwrap()),
            Box::new(move |c| c.commit_mt_proof(vc, citizen, proof.commitment()).unwrap()),
            Box::new(move |c| c.provide_consent1(citizen, vc_id, true).unwrap()),
            {
                let h = hash(vid);
                Box::new(move |c| c.commit_vial_id(vc, citizen, h).unwrap())
            },
            Box::new(move |c| c.provide_consent2(citizen, vc_id, true).unwrap()),
            Box::new(move |c| c.provide_consent3(citizen, vc_id, true).unwrap()),
            Box::new(move |c| c.register_vax_timestamp(vc, citizen).unwrap()),
            Box::new(move |c| c.acknowledge_vaccination(citizen, vc_id, true).unwrap()),
        ];
        for step in steps.iter().take(stop_after) {
            step(c);
        }
    }

    pub const INJECTION_STEPS: usize = 10;

    pub fn vaccinate(&mut self, citizen: PartyAddress, vc_id: VcId, vial: usize) {
        self.inject(citizen, vc_id, vial, Self::INJECTION_STEPS);
    }
}
