//! Scripted scenarios: a JSON description of parties and protocol steps,
//! and a runner that executes it against a fresh [`World`].
//!
//! ```json
//! {
//!   "name": "example",
//!   "seed": 1,
//!   "parties": [
//!     { "name": "govt", "role": "govt" },
//!     { "name": "vc", "role": "vc" },
//!     { "name": "alice", "role": "citizen",
//!       "pii": { "name": "..", "address": "..", "dob": "..", "citizen_id": ".." } }
//!   ],
//!   "script": [
//!     { "actor": "vc", "op": "register_vc" },
//!     { "actor": "vc", "op": "refill_stock", "vials": 8 },
//!     { "actor": "alice", "op": "obtain_token" },
//!     { "actor": "vc", "op": "administer_dose", "target": "alice" },
//!     { "advance": 101, "actor": "alice", "op": "claim_timeout",
//!       "protocol": "injection", "expect": "GuardFailed" }
//!   ]
//! }
//! ```
//!
//! Every step may advance the clock first (`advance`), may override the
//! decision an honest actor would take (`decision`), and states the outcome
//! it expects (`expect`, default `"ok"`, otherwise an error kind).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::actors::{ActorError, PartySpec, TimeoutTarget, TraceEntry, VaccineInfo, World};
use crate::chain::{ChainConfig, Deposits, Role, Stats, Timeouts};
use crate::ledger::{Amount, Tick};

pub const DEFAULT_VIALS: u64 = 8;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Script operations. Composite flows first, then the single steps they
/// are made of.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Wait,
    RegisterVc,
    RefillStock,
    ObtainToken,
    AdministerDose,
    ObtainVp,
    VerifyVp,
    RegApply,
    RegHash,
    RegConfirmHash,
    RegDecide,
    RefillRequest,
    DispatchStock,
    StockAccept,
    TokenRequest,
    TokenReview,
    InjBegin,
    InjLockVc,
    InjLockC,
    InjCommitProof,
    InjConsent1,
    InjCommitVial,
    InjConsent2,
    InjConsent3,
    InjReveal,
    InjVaccinate,
    InjAcknowledge,
    VpApply,
    VpLockGovt,
    VpSendProof,
    VpConsent1,
    VpConsent2,
    VpReveal,
    IssueVp,
    VfRequest,
    VfCommitRk,
    VfConsent,
    VfGrant,
    VfFetch,
    VfResult,
    VfRevoke,
    ClaimTimeout,
}

impl Op {
    /// Role required of the actor and, where the op has one, of the target.
    /// `None` for the actor means any role.
    fn roles(self) -> (Option<Role>, Option<Role>) {
        use Op::*;
        use Role::*;
        match self {
            Wait | ClaimTimeout => (None, None),
            RegisterVc | RefillStock | RegApply | RegConfirmHash | RefillRequest | StockAccept => (Some(Vc), None),
            RegHash | RegDecide | DispatchStock => (Some(Govt), Some(Vc)),
            ObtainToken | TokenRequest | InjLockC | InjConsent1 | InjConsent2 | InjConsent3 | InjAcknowledge | ObtainVp
            | VpApply | VpSendProof => (Some(Citizen), None),
            TokenReview | VpLockGovt | VpConsent1 | VpConsent2 | VpReveal | IssueVp => (Some(Govt), Some(Citizen)),
            AdministerDose | InjLockVc | InjCommitProof | InjCommitVial | InjReveal | InjVaccinate => (Some(Vc), Some(Citizen)),
            InjBegin => (Some(Citizen), Some(Vc)),
            VerifyVp | VfRequest | VfConsent | VfFetch | VfResult => (Some(Verifier), Some(Citizen)),
            VfCommitRk | VfGrant | VfRevoke => (Some(Citizen), Some(Verifier)),
        }
    }

    fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    #[serde(default)]
    pub advance: Tick,
    #[serde(default)]
    pub actor: Option<String>,
    pub op: Op,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub vials: Option<u64>,
    #[serde(default)]
    pub decision: Option<bool>,
    #[serde(default)]
    pub protocol: Option<TimeoutTarget>,
    #[serde(default)]
    pub expect: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
}

impl Step {
    pub fn new(actor: &str, op: Op) -> Self {
        Step {
            advance: 0,
            actor: Some(actor.into()),
            op,
            target: None,
            vials: None,
            decision: None,
            protocol: None,
            expect: None,
            note: None,
        }
    }

    pub fn target(mut self, target: &str) -> Self {
        self.target = Some(target.into());
        self
    }

    pub fn after(mut self, ticks: Tick) -> Self {
        self.advance = ticks;
        self
    }

    pub fn expect(mut self, kind: &str) -> Self {
        self.expect = Some(kind.into());
        self
    }

    pub fn decision(mut self, d: bool) -> Self {
        self.decision = Some(d);
        self
    }

    pub fn protocol(mut self, p: TimeoutTarget) -> Self {
        self.protocol = Some(p);
        self
    }

    pub fn expected(&self) -> &str {
        self.expect.as_deref().unwrap_or("ok")
    }
}

fn default_charge() -> Amount {
    ChainConfig::default().service_charge_per_vial
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub timeouts: Timeouts,
    #[serde(default)]
    pub deposits: Deposits,
    #[serde(default = "default_charge")]
    pub service_charge_per_vial: Amount,
    #[serde(default)]
    pub vaccine: VaccineInfo,
    pub parties: Vec<PartySpec>,
    /// Party expected to end up penalized, for deviation scenarios.
    #[serde(default)]
    pub faulty: Option<String>,
    /// Honest party facing the faulty one.
    #[serde(default)]
    pub counterparty: Option<String>,
    pub script: Vec<Step>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn config(&self) -> ChainConfig {
        ChainConfig { timeouts: self.timeouts, deposits: self.deposits, service_charge_per_vial: self.service_charge_per_vial }
    }

    /// Checks everything that can be checked without running the script.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        self.config().validate().map_err(|e| ScenarioError::Invalid(e.into()))?;
        let roles: BTreeMap<&str, Role> = self.parties.iter().map(|p| (p.name.as_str(), p.role)).collect();
        if roles.len() != self.parties.len() {
            return bad("duplicate party names".into());
        }
        for name in self.faulty.iter().chain(&self.counterparty) {
            if !roles.contains_key(name.as_str()) {
                return bad(format!("undeclared party {name:?}"));
            }
        }
        for (i, step) in self.script.iter().enumerate() {
            let (want_actor, want_target) = step.op.roles();
            let check = |who: &Option<String>, want: Option<Role>, what: &str| -> Result<(), ScenarioError> {
                match who {
                    None => Err(ScenarioError::Invalid(format!("step {i}: {} needs {what}", step.op.name()))),
                    Some(n) => match roles.get(n.as_str()) {
                        None => Err(ScenarioError::Invalid(format!("step {i}: undeclared party {n:?}"))),
                        Some(r) if want.is_some_and(|w| w != *r) => Err(ScenarioError::Invalid(format!(
                            "step {i}: {} expects a {} as {what}, {n:?} is a {r}",
                            step.op.name(),
                            want.expect("checked")
                        ))),
                        Some(_) => Ok(()),
                    },
                }
            };
            if step.op != Op::Wait {
                check(&step.actor, want_actor, "an actor")?;
            }
            if want_target.is_some() || step.target.is_some() {
                check(&step.target, want_target, "a target")?;
            }
            if step.op == Op::ClaimTimeout && step.protocol.is_none() {
                return bad(format!("step {i}: claim_timeout needs a protocol"));
            }
            if matches!(step.op, Op::RefillStock | Op::DispatchStock) && step.vials == Some(0) {
                return bad(format!("step {i}: vials must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Replaces the scenario's own seed.
    pub seed: Option<u64>,
    /// Stop at the first step that breaks an invariant.
    pub strict: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartyLine {
    pub name: String,
    pub role: Role,
    pub behavior: String,
    pub address: String,
    pub genesis: Amount,
}

/// One line of the JSON-lines transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptLine {
    Header {
        scenario: String,
        seed: u64,
        parties: Vec<PartyLine>,
    },
    Step {
        index: usize,
        t: Tick,
        actor: Option<String>,
        op: Op,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        target: Option<String>,
        expect: String,
        outcome: String,
        #[serde(skip_serializing_if = "Value::is_null", default)]
        result: Value,
        substeps: Vec<TraceEntry>,
        #[serde(skip_serializing_if = "Vec::is_empty", default)]
        violations: Vec<String>,
    },
    Sweep {
        t: Tick,
        returned_to_govt: Amount,
    },
    Summary {
        t: Tick,
        steps_run: usize,
        passed: bool,
        violations: Vec<Finding>,
        expectation_failures: Vec<Finding>,
        open_instances: Vec<String>,
        balances: BTreeMap<String, Amount>,
        stats: Stats,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    /// Script index, or `None` for end-of-run checks.
    pub step: Option<usize>,
    pub message: String,
}

pub struct RunReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub lines: Vec<TranscriptLine>,
    pub violations: Vec<Finding>,
    pub expectation_failures: Vec<Finding>,
    pub genesis: BTreeMap<String, Amount>,
    pub balances: BTreeMap<String, Amount>,
    pub stats: Stats,
    pub world: World,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.expectation_failures.is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    /// JSON lines, one per transcript entry, newline-terminated.
    pub fn transcript(&self) -> String {
        self.lines.iter().map(|l| serde_json::to_string(l).expect("transcript serializes") + "\n").collect()
    }

    /// Outcome recorded for script step `index`.
    pub fn outcome(&self, index: usize) -> Option<&str> {
        self.lines.iter().find_map(|l| match l {
            TranscriptLine::Step { index: i, outcome, .. } if *i == index => Some(outcome.as_str()),
            _ => None,
        })
    }

    pub fn net_change(&self, party: &str) -> Option<i128> {
        Some(i128::from(*self.balances.get(party)?) - i128::from(*self.genesis.get(party)?))
    }
}

fn execute(w: &mut World, step: &Step) -> Result<Value, ActorError> {
    let a = step.actor.as_deref().unwrap_or_default();
    let t = || step.target.as_deref().ok_or_else(|| ActorError::Protocol("missing target".into()));
    let d = step.decision;
    let govt = |w: &World| w.check_role(a, Role::Govt);
    match step.op {
        Op::Wait => Ok(Value::Null),
        Op::RegisterVc => w.vc_register(a),
        Op::RefillStock => w.vc_refill(a, step.vials.unwrap_or(DEFAULT_VIALS)),
        Op::ObtainToken => w.citizen_obtain_token(a),
        Op::AdministerDose => w.vc_administer_dose(a, t()?),
        Op::ObtainVp => w.citizen_obtain_vp(a),
        Op::VerifyVp => w.verifier_check_vp(a, t()?).map(|r| json!({ "result": r })),
        Op::RegApply => w.reg_apply(a),
        Op::RegHash => govt(w).and_then(|_| w.reg_hash(t()?)),
        Op::RegConfirmHash => w.reg_confirm_hash(a, d),
        Op::RegDecide => govt(w).and_then(|_| w.reg_decide(t()?, d)),
        Op::RefillRequest => w.refill_request(a),
        Op::DispatchStock => govt(w).and_then(|_| w.govt_dispatch_stock(t()?, step.vials.unwrap_or(DEFAULT_VIALS))),
        Op::StockAccept => w.stock_accept(a, d),
        Op::TokenRequest => w.token_request(a),
        Op::TokenReview => govt(w).and_then(|_| w.token_review(t()?, d)),
        Op::InjBegin => w.inj_begin(a, t()?),
        Op::InjLockVc => w.inj_lock_vc(a, t()?),
        Op::InjLockC => w.inj_lock_c(a),
        Op::InjCommitProof => w.inj_commit_proof(a, t()?),
        Op::InjConsent1 => w.inj_consent1(a, d),
        Op::InjCommitVial => w.inj_commit_vial(a, t()?),
        Op::InjConsent2 => w.inj_consent2(a, d),
        Op::InjConsent3 => w.inj_consent3(a, d),
        Op::InjReveal => w.inj_reveal(a, t()?),
        Op::InjVaccinate => w.inj_vaccinate(a, t()?),
        Op::InjAcknowledge => w.inj_acknowledge(a, d),
        Op::VpApply => w.vp_apply(a),
        Op::VpLockGovt => govt(w).and_then(|_| w.vp_lock_govt(t()?)),
        Op::VpSendProof => w.vp_send_proof(a),
        Op::VpConsent1 => govt(w).and_then(|_| w.vp_consent1(t()?, d)),
        Op::VpConsent2 => govt(w).and_then(|_| w.vp_consent2(t()?, d)),
        Op::VpReveal => govt(w).and_then(|_| w.vp_reveal(t()?)),
        Op::IssueVp => govt(w).and_then(|_| w.govt_issue_vp(t()?)),
        Op::VfRequest => w.vf_request(a, t()?),
        Op::VfCommitRk => w.vf_commit_rk(a, t()?),
        Op::VfConsent => w.vf_consent(a, t()?, d),
        Op::VfGrant => w.vf_grant(a, t()?),
        Op::VfFetch => w.vf_fetch(a, t()?),
        Op::VfResult => w.vf_result(a, t()?, d),
        Op::VfRevoke => w.vf_revoke(a, t()?),
        Op::ClaimTimeout => w.claim_timeout(a, step.protocol.expect("validated"), step.target.as_deref()),
    }
}

/// Executes `scenario` from genesis. Only setup problems are errors; step
/// failures and invariant violations end up in the report.
pub fn run(scenario: &Scenario, opts: RunOptions) -> Result<RunReport, ScenarioError> {
    run_observed(scenario, opts, |_, _| {})
}

/// Like [`run`], calling `observe(step_index, world)` after every script step.
pub fn run_observed<F>(scenario: &Scenario, opts: RunOptions, mut observe: F) -> Result<RunReport, ScenarioError>
where
    F: FnMut(usize, &World),
{
    scenario.validate()?;
    let seed = opts.seed.unwrap_or(scenario.seed);
    let mut world = World::new(scenario.config(), &scenario.parties, seed, scenario.vaccine.clone())
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let genesis: BTreeMap<String, Amount> = scenario.parties.iter().map(|p| (p.name.clone(), p.balance)).collect();
    let mut lines = vec![TranscriptLine::Header {
        scenario: scenario.name.clone(),
        seed,
        parties: world
            .actors()
            .iter()
            .map(|a| PartyLine {
                name: a.name.clone(),
                role: a.role,
                behavior: a.behavior.to_string(),
                address: a.address.to_hex(),
                genesis: genesis[&a.name],
            })
            .collect(),
    }];
    let mut violations = Vec::new();
    let mut expectation_failures = Vec::new();
    let mut steps_run = 0;

    for (index, step) in scenario.script.iter().enumerate() {
        steps_run += 1;
        let advanced = if step.advance > 0 { world.advance_time(step.advance).map(|_| ()) } else { Ok(()) };
        let res = advanced.and_then(|_| execute(&mut world, step));
        let substeps = world.take_trace();
        let (outcome, result) = match res {
            Ok(v) => ("ok".to_string(), v),
            Err(e) => (e.kind().to_string(), Value::String(e.to_string())),
        };
        let mut step_violations: Vec<String> = substeps.iter().flat_map(|s| s.violations.iter().cloned()).collect();
        if substeps.is_empty() {
            step_violations = world.chain.invariant_violations();
        }
        let unique: BTreeSet<String> = step_violations.iter().cloned().collect();
        violations.extend(unique.into_iter().map(|message| Finding { step: Some(index), message }));
        if outcome != step.expected() {
            expectation_failures.push(Finding {
                step: Some(index),
                message: format!("{} by {:?}: expected {}, got {outcome}", step.op.name(), step.actor, step.expected()),
            });
        }
        lines.push(TranscriptLine::Step {
            index,
            t: world.chain.now(),
            actor: step.actor.clone(),
            op: step.op,
            target: step.target.clone(),
            expect: step.expected().to_string(),
            outcome,
            result,
            substeps,
            violations: step_violations,
        });
        observe(index, &world);
        if opts.strict && !violations.is_empty() {
            break;
        }
    }

    let returned_to_govt = world.chain.sweep_service_charges();
    lines.push(TranscriptLine::Sweep { t: world.chain.now(), returned_to_govt });
    for message in world.chain.invariant_violations() {
        violations.push(Finding { step: None, message });
    }
    let open_instances = world.chain.open_instances();
    for inst in &open_instances {
        violations.push(Finding { step: None, message: format!("instance still open at end of run: {inst}") });
    }

    let balances: BTreeMap<String, Amount> =
        world.actors().iter().map(|a| (a.name.clone(), world.chain.balance(&a.address))).collect();
    let stats = world.chain.stats();
    let passed = violations.is_empty() && expectation_failures.is_empty();
    lines.push(TranscriptLine::Summary {
        t: world.chain.now(),
        steps_run,
        passed,
        violations: violations.clone(),
        expectation_failures: expectation_failures.clone(),
        open_instances,
        balances: balances.clone(),
        stats: stats.clone(),
    });
    Ok(RunReport {
        scenario: scenario.clone(),
        seed,
        lines,
        violations,
        expectation_failures,
        genesis,
        balances,
        stats,
        world,
    })
}

/// Pulls the final statistics out of a transcript produced by [`run`].
pub fn stats_from_transcript(text: &str) -> Result<Stats, ScenarioError> {
    let mut found = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        if let TranscriptLine::Summary { stats, .. } = serde_json::from_str(line)? {
            found = Some(stats);
        }
    }
    found.ok_or_else(|| ScenarioError::Invalid("transcript has no summary line".into()))
}
