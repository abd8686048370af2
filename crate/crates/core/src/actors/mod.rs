//! Off-chain agents: the government, vaccination centers, citizens and
//! verifiers, plus the simulated world that connects them to the chain.
//!
//! Every protocol step is a method on [`World`]. A step performs the actor's
//! local work (building proofs, checking commitments, encrypting documents),
//! exchanges off-chain messages and invokes the matching contract operation.
//! Composite flows chain the steps of one protocol together.

mod flows;
mod network;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cas::{CasError, ContentStore};
use crate::chain::{vial_transition_ok, Chain, ChainConfig, ContractError, Role, TokenId, VcId};
use crate::contracts::c_govt::VpRecord;
use crate::crypto::{pre_decrypt, Ciphertext, CryptoError, MerkleProof, MerkleTree, PreKeyPair, ReEncryptionKey, SigningKeyPair};
use crate::ledger::{Amount, Ledger, PartyAddress, Tick};

pub use flows::TimeoutTarget;
pub use network::{MessageKind, Network, OffchainMessage};

/// Separator placed between PII fields before hashing.
pub const PII_SEPARATOR: &str = "\u{2016}";

pub const DEFAULT_GENESIS: Amount = 1_000_000;

#[derive(Debug, Error)]
pub enum ActorError {
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Cas(#[from] CasError),
    #[error("unknown actor {0:?}")]
    UnknownActor(String),
    #[error("world setup: {0}")]
    Setup(String),
    /// An off-chain precondition did not hold (missing message, no stock, ...).
    #[error("protocol: {0}")]
    Protocol(String),
}

impl ActorError {
    /// Short tag used in transcripts and scenario expectations.
    pub fn kind(&self) -> &'static str {
        match self {
            ActorError::Contract(e) => e.kind(),
            ActorError::Crypto(_) => "CryptoError",
            ActorError::Cas(_) => "CasError",
            ActorError::UnknownActor(_) => "UnknownActor",
            ActorError::Setup(_) => "SetupError",
            ActorError::Protocol(_) => "ProtocolError",
        }
    }
}

pub type StepResult = Result<Value, ActorError>;

fn protocol_err(msg: impl Into<String>) -> ActorError {
    ActorError::Protocol(msg.into())
}

/// Citizen personal data. Never leaves the off-chain channel in clear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pii {
    pub name: String,
    pub address: String,
    pub dob: String,
    pub citizen_id: String,
}

impl Pii {
    pub fn fields(&self) -> [&str; 4] {
        [&self.name, &self.address, &self.dob, &self.citizen_id]
    }

    pub fn canonical(&self) -> Vec<u8> {
        self.fields().join(PII_SEPARATOR).into_bytes()
    }
}

/// Strategy an actor follows for the whole scenario.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Behavior {
    #[default]
    Honest,
    /// Govt commits the root of a different vial set than it ships.
    WrongMr,
    /// VC proves membership of a vial that is not in its stock.
    WrongProof,
    /// VC offers a vial that was already administered.
    ReuseVial,
    /// Govt signs and uploads the digest of a different document.
    ForgedMd,
    /// Citizen hands over a re-encryption key previously issued by `victim`.
    RkReplay { victim: String },
    /// Citizen sends personal data that differs from the committed digest.
    PiiTamper,
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Behavior::Honest => f.write_str("honest"),
            Behavior::WrongMr => f.write_str("wrong-mr"),
            Behavior::WrongProof => f.write_str("wrong-proof"),
            Behavior::ReuseVial => f.write_str("reuse-vial"),
            Behavior::ForgedMd => f.write_str("forged-md"),
            Behavior::RkReplay { victim } => write!(f, "rk-replay:{victim}"),
            Behavior::PiiTamper => f.write_str("pii-tamper"),
        }
    }
}

impl FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "honest" => Behavior::Honest,
            "wrong-mr" => Behavior::WrongMr,
            "wrong-proof" => Behavior::WrongProof,
            "reuse-vial" => Behavior::ReuseVial,
            "forged-md" => Behavior::ForgedMd,
            "pii-tamper" => Behavior::PiiTamper,
            _ => match s.strip_prefix("rk-replay:") {
                Some(victim) if !victim.is_empty() => Behavior::RkReplay { victim: victim.to_string() },
                _ => return Err(format!("unknown behavior {s:?}")),
            },
        })
    }
}

impl TryFrom<String> for Behavior {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Behavior> for String {
    fn from(b: Behavior) -> String {
        b.to_string()
    }
}

impl Behavior {
    fn fits(&self, role: Role) -> bool {
        match self {
            Behavior::Honest => true,
            Behavior::WrongMr | Behavior::ForgedMd => role == Role::Govt,
            Behavior::WrongProof | Behavior::ReuseVial => role == Role::Vc,
            Behavior::RkReplay { .. } | Behavior::PiiTamper => role == Role::Citizen,
        }
    }
}

/// The passport document. Field order is the canonical serialization order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VpDocument {
    pub token_id: TokenId,
    pub vial_id: String,
    pub vc_id: VcId,
    pub vaccination_time: Tick,
    pub vaccine_name: String,
    pub target_disease: String,
}

impl VpDocument {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("plain struct serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        serde_json::from_slice(bytes).map_err(|e| CryptoError::Decode(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaccineInfo {
    pub name: String,
    pub target_disease: String,
}

impl Default for VaccineInfo {
    fn default() -> Self {
        VaccineInfo { name: "mRNA-1273".into(), target_disease: "COVID-19".into() }
    }
}

/// A party as declared by a scenario.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartySpec {
    pub name: String,
    pub role: Role,
    #[serde(default = "default_genesis")]
    pub balance: Amount,
    #[serde(default)]
    pub behavior: Behavior,
    #[serde(default)]
    pub pii: Option<Pii>,
}

fn default_genesis() -> Amount {
    DEFAULT_GENESIS
}

impl PartySpec {
    pub fn new(name: &str, role: Role) -> Self {
        PartySpec { name: name.into(), role, balance: DEFAULT_GENESIS, behavior: Behavior::Honest, pii: None }
    }

    pub fn with_behavior(mut self, behavior: Behavior) -> Self {
        self.behavior = behavior;
        self
    }

    pub fn with_pii(mut self, pii: Pii) -> Self {
        self.pii = Some(pii);
        self
    }
}

#[derive(Clone, Debug, Default)]
struct GovtLocal {
    /// Vial sets shipped, per VC, in dispatch order.
    dispatched: BTreeMap<PartyAddress, Vec<MerkleTree>>,
    /// Membership proofs disclosed by citizens applying for a passport.
    vp_proofs: BTreeMap<PartyAddress, MerkleProof>,
    dispatch_seq: u64,
}

#[derive(Clone, Debug, Default)]
struct VcLocal {
    application: Vec<u8>,
    stock: Option<MerkleTree>,
    /// Vial picked for each citizen currently being served, with its proof.
    sessions: BTreeMap<PartyAddress, (Vec<u8>, MerkleProof)>,
}

#[derive(Clone, Debug, Default)]
struct CitizenLocal {
    proof: Option<MerkleProof>,
    vial: Option<Vec<u8>>,
}

#[derive(Clone, Debug, Default)]
struct VfSession {
    rk: Option<ReEncryptionKey>,
    record: Option<VpRecord>,
}

#[derive(Clone, Debug, Default)]
struct VerifierLocal {
    sessions: BTreeMap<PartyAddress, VfSession>,
    results: Vec<(PartyAddress, bool)>,
}

/// One protocol participant.
#[derive(Clone, Debug)]
pub struct Actor {
    pub name: String,
    pub role: Role,
    pub behavior: Behavior,
    pub address: PartyAddress,
    pub pii: Option<Pii>,
    signing: SigningKeyPair,
    pre: PreKeyPair,
    govt: GovtLocal,
    vc: VcLocal,
    citizen: CitizenLocal,
    verifier: VerifierLocal,
}

impl Actor {
    pub fn signing_keys(&self) -> &SigningKeyPair {
        &self.signing
    }

    pub fn pre_keys(&self) -> &PreKeyPair {
        &self.pre
    }

    /// Verification outcomes this verifier has recorded, oldest first.
    pub fn results(&self) -> &[(PartyAddress, bool)] {
        &self.verifier.results
    }
}

/// One executed protocol step, as it appears in a transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: Tick,
    pub actor: String,
    pub op: String,
    pub outcome: String,
    #[serde(skip_serializing_if = "Value::is_null", default)]
    pub detail: Value,
    /// Invariant violations observed right after this step.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub violations: Vec<String>,
}

/// Chain, content store, network and actors of one simulation run.
#[derive(Clone)]
pub struct World {
    pub chain: Chain,
    pub cas: ContentStore,
    pub network: Network,
    actors: Vec<Actor>,
    names: BTreeMap<String, usize>,
    govt: usize,
    vaccine: VaccineInfo,
    rng: ChaCha20Rng,
    trace: Vec<TraceEntry>,
}

impl World {
    /// Creates keys for every party, in declaration order, from `seed`.
    pub fn new(config: ChainConfig, parties: &[PartySpec], seed: u64, vaccine: VaccineInfo) -> Result<Self, ActorError> {
        config.validate().map_err(|e| ActorError::Setup(e.into()))?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut names = BTreeMap::new();
        let mut actors = Vec::with_capacity(parties.len());
        for (i, p) in parties.iter().enumerate() {
            if names.insert(p.name.clone(), i).is_some() {
                return Err(ActorError::Setup(format!("duplicate party name {:?}", p.name)));
            }
            if !p.behavior.fits(p.role) {
                return Err(ActorError::Setup(format!("behavior {} does not apply to a {}", p.behavior, p.role)));
            }
            if let Some(pii) = &p.pii {
                if p.role != Role::Citizen || pii.fields().iter().any(|f| f.is_empty()) {
                    return Err(ActorError::Setup(format!("{:?} carries PII but is not a citizen or has empty fields", p.name)));
                }
            }
            let signing = SigningKeyPair::generate(&mut rng);
            let pre = PreKeyPair::generate(&mut rng);
            actors.push(Actor {
                name: p.name.clone(),
                role: p.role,
                behavior: p.behavior.clone(),
                address: PartyAddress::from_public_key(signing.public()),
                pii: p.pii.clone(),
                signing,
                pre,
                govt: GovtLocal::default(),
                vc: VcLocal::default(),
                citizen: CitizenLocal::default(),
                verifier: VerifierLocal::default(),
            });
        }
        for p in parties {
            if let Behavior::RkReplay { victim } = &p.behavior {
                let ok = names.get(victim).is_some_and(|&i| actors[i].role == Role::Citizen && victim != &p.name);
                if !ok {
                    return Err(ActorError::Setup(format!("rk-replay victim {victim:?} is not another citizen")));
                }
            }
        }
        let govts: Vec<usize> = actors.iter().enumerate().filter(|(_, a)| a.role == Role::Govt).map(|(i, _)| i).collect();
        let [govt] = govts[..] else {
            return Err(ActorError::Setup(format!("expected exactly one govt party, found {}", govts.len())));
        };
        let ledger = Ledger::genesis(actors.iter().zip(parties).map(|(a, p)| (a.address, p.balance)));
        let chain = Chain::new(config, *actors[govt].signing.public(), ledger);
        Ok(World {
            chain,
            cas: ContentStore::in_memory(),
            network: Network::default(),
            actors,
            names,
            govt,
            vaccine,
            rng,
            trace: Vec::new(),
        })
    }

    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn actor(&self, name: &str) -> Option<&Actor> {
        self.names.get(name).map(|&i| &self.actors[i])
    }

    pub fn address_of(&self, name: &str) -> Result<PartyAddress, ActorError> {
        Ok(self.actors[self.idx(name)?].address)
    }

    pub fn name_of(&self, addr: &PartyAddress) -> Option<&str> {
        self.actors.iter().find(|a| a.address == *addr).map(|a| a.name.as_str())
    }

    pub fn govt(&self) -> &Actor {
        &self.actors[self.govt]
    }

    pub fn vaccine(&self) -> &VaccineInfo {
        &self.vaccine
    }

    pub fn balance_of(&self, name: &str) -> Result<Amount, ActorError> {
        Ok(self.chain.balance(&self.address_of(name)?))
    }

    /// Steps recorded since the last call.
    pub fn take_trace(&mut self) -> Vec<TraceEntry> {
        std::mem::take(&mut self.trace)
    }

    pub fn advance_time(&mut self, delta: Tick) -> Result<Tick, ActorError> {
        self.chain.advance_time(delta).map_err(|e| ActorError::Contract(ContractError::Ledger(e)))
    }

    /// Every PII field of every declared citizen.
    pub fn pii_strings(&self) -> Vec<String> {
        self.actors.iter().filter_map(|a| a.pii.as_ref()).flat_map(|p| p.fields().map(String::from)).collect()
    }

    /// Fetches and decrypts the citizen's own passport from the content store.
    pub fn citizen_open_vp(&self, citizen: &str) -> Result<VpDocument, ActorError> {
        let a = &self.actors[self.role_idx(citizen, Role::Citizen)?];
        let token = self.chain.c_govt().token_of(&a.address).ok_or_else(|| protocol_err("citizen has no token"))?;
        let record = self.chain.vp_record(a.address, token)?;
        let ct = Ciphertext::from_bytes(self.cas.get(&record.c_id)?)?;
        Ok(VpDocument::from_bytes(&pre_decrypt(&a.pre, &ct)?)?)
    }

    /// Fails unless `name` is a declared party with the given role.
    pub fn check_role(&self, name: &str, role: Role) -> Result<(), ActorError> {
        self.role_idx(name, role).map(|_| ())
    }

    fn idx(&self, name: &str) -> Result<usize, ActorError> {
        self.names.get(name).copied().ok_or_else(|| ActorError::UnknownActor(name.to_string()))
    }

    fn role_idx(&self, name: &str, role: Role) -> Result<usize, ActorError> {
        let i = self.idx(name)?;
        if self.actors[i].role != role {
            return Err(protocol_err(format!("{name} is a {}, not a {role}", self.actors[i].role)));
        }
        Ok(i)
    }

    /// Runs `f` as one traced step attributed to `actor`.
    fn traced<F>(&mut self, actor: &str, op: &str, f: F) -> StepResult
    where
        F: FnOnce(&mut Self) -> StepResult,
    {
        let t = self.chain.now();
        let vials_before = self.chain.c_vc().vial_states().clone();
        let res = f(self);
        let (outcome, detail) = match &res {
            Ok(v) => ("ok".to_string(), v.clone()),
            Err(e) => (e.kind().to_string(), Value::String(e.to_string())),
        };
        let mut violations = self.chain.invariant_violations();
        let vials_after = self.chain.c_vc().vial_states();
        for (d, &to) in vials_after {
            let from = vials_before.get(d).copied().unwrap_or_default();
            if !vial_transition_ok(from, to) {
                violations.push(format!("vial {} moved {from:?} -> {to:?}", d.to_hex()));
            }
        }
        for d in vials_before.keys().filter(|d| !vials_after.contains_key(*d)) {
            violations.push(format!("vial {} disappeared", d.to_hex()));
        }
        self.trace.push(TraceEntry { t, actor: actor.to_string(), op: op.to_string(), outcome, detail, violations });
        res
    }
}
