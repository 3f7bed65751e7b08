//! The optimistic protocol state machine.
//!
//! Operators submit encrypted results with signed receipts to the DA store.
//! Each result stays pending for `delta` epochs, during which any actor can
//! open a full challenge; a stake-weighted committee re-executes inside mock
//! enclaves and votes on byte equality. Light audits re-execute without any
//! power to slash.

pub mod actors;
pub mod committee;
pub mod events;
pub mod params;
pub mod slash;

use std::collections::{BTreeMap, BTreeSet};

use detcore::{ExecutionTuple, InferenceOutput, VOCAB_SIZE};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use actors::{Actor, ActorId, ActorRole, Behavior};
pub use committee::{committee_seed, sample_committee, tally, CommitteeError, Tally, Vote};
pub use events::{Event, EventLog};
pub use params::{ParamError, ProtocolParams};
pub use slash::{distribute_slash, SlashDistribution};

use crate::da::{leaf_hash, verify_inclusion, DaError, DaPointer, DaStore};
use crate::encoding::Canonical;
use crate::hash::{hash_commit, hash_parts, Hash32};
use crate::privacy::attestation::DEFAULT_FRESHNESS_WINDOW;
use crate::privacy::{
    self, provision, session_nonce, AttestationQuote, AttestationRoot, Denial, EnclaveContext, GovernanceApproval, Kms,
    KmsError, Label, QuotePolicy, Role, TaintLedger,
};
use crate::receipts::{
    check_receipt, make_receipt, output_hash, request_hash, DaRecord, EnvironmentSummary, Receipt, ReceiptContext, ReceiptJson,
};
use crate::registry::{measurement_of, ApprovedRegistry, EnvField, EpochStatus};
use crate::signing::{EcdsaSigner, PublicKey, SignError, Signer};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("unknown actor {0}")]
    UnknownActor(ActorId),
    #[error("actor {actor} has role {role:?}, expected {expected:?}")]
    WrongRole { actor: ActorId, role: ActorRole, expected: ActorRole },
    #[error("behavior {0:?} is not valid for role {1:?}")]
    BadBehavior(Behavior, ActorRole),
    #[error("operator {0} has no stake")]
    ZeroStake(ActorId),
    #[error("environment field {0:?} is not approved")]
    Unapproved(EnvField),
    #[error("unknown submission {0}")]
    UnknownSubmission(u64),
    #[error("submission {0} is {1:?}, not pending")]
    NotPending(u64, SubmissionStatus),
    #[error("challenge window for submission {0} has closed")]
    WindowExpired(u64),
    #[error("key epoch {0} is retired")]
    EpochRetired(u32),
    #[error("no quote can be stale before epoch {0}")]
    TooEarlyForStaleQuote(u64),
    #[error(transparent)]
    Committee(#[from] CommitteeError),
    #[error(transparent)]
    Sign(#[from] SignError),
    #[error(transparent)]
    Kms(#[from] KmsError),
    #[error("envelope: {0}")]
    Envelope(#[from] privacy::EnvelopeError),
    #[error("inference: {0}")]
    Inference(#[from] detcore::DetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmissionStatus {
    Pending,
    Finalized,
    Slashed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub id: u64,
    pub operator: ActorId,
    pub client: ActorId,
    /// Hash of the client's canonical request; the request itself stays encrypted.
    pub request_hash: Hash32,
    pub receipt: Receipt,
    pub da_pointer: DaPointer,
    pub published_at: u64,
    pub status: SubmissionStatus,
    /// Strategy the operator actually applied. Bookkeeping for metrics only.
    pub injected: Option<Behavior>,
    pub challenged: bool,
}

/// Why a committee member or auditor voted the way it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteReason {
    Match,
    Unavailable,
    BadInclusion,
    BadRecord,
    ReceiptMismatch,
    BadReceipt,
    UnapprovedQuote,
    KeyUnavailable,
    DecryptFailed,
    RequestMismatch,
    EnvironmentMismatch,
    OutputMismatch,
    Offline,
    Colluding,
}

impl VoteReason {
    pub fn as_str(self) -> &'static str {
        use VoteReason::*;
        match self {
            Match => "match",
            Unavailable => "unavailable",
            BadInclusion => "bad_inclusion",
            BadRecord => "bad_record",
            ReceiptMismatch => "receipt_mismatch",
            BadReceipt => "bad_receipt",
            UnapprovedQuote => "unapproved_quote",
            KeyUnavailable => "key_unavailable",
            DecryptFailed => "decrypt_failed",
            RequestMismatch => "request_mismatch",
            EnvironmentMismatch => "environment_mismatch",
            OutputMismatch => "output_mismatch",
            Offline => "offline",
            Colluding => "colluding",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteOutcome {
    pub vote: Vote,
    pub reason: VoteReason,
    pub output_hash: Option<Hash32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditResult {
    Match,
    Mismatch,
    Unavailable,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub submission: u64,
    pub results: Vec<(ActorId, AuditResult)>,
}

impl AuditReport {
    pub fn mismatch(&self) -> bool {
        self.results.iter().any(|(_, r)| *r == AuditResult::Mismatch)
    }

    pub fn unavailable(&self) -> bool {
        self.results.iter().any(|(_, r)| *r == AuditResult::Unavailable)
    }

    /// Whether the report gives grounds for a full challenge.
    pub fn raises_alarm(&self) -> bool {
        self.mismatch() || self.unavailable()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengeOutcome {
    Upheld,
    Slashed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChallengeVerdict {
    pub submission: u64,
    pub committee: Vec<(ActorId, u64)>,
    pub votes: Vec<Vote>,
    pub reasons: Vec<VoteReason>,
    pub tally: Tally,
    pub outcome: ChallengeOutcome,
    pub majority_output_hash: Hash32,
    pub slash: Option<SlashDistribution>,
    /// Honest members whose re-execution disagreed with an upheld result.
    pub backstop_alert: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RogueRequest {
    /// A genuine quote presented after its freshness window.
    StaleQuote,
    /// A quote from an enclave running an unapproved measurement.
    UnapprovedMeasurement,
    /// A quote signed by a key other than the attestation root.
    ForgedQuote,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RogueOutcome {
    pub released: u64,
    pub denials: Vec<(u8, Denial)>,
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub params: ProtocolParams,
    pub registry: ApprovedRegistry,
    pub kms_threshold: usize,
    pub kms_shards: usize,
    pub freshness_window: u64,
    pub seed: u64,
    pub log_events: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            params: ProtocolParams::default(),
            registry: ApprovedRegistry::default(),
            kms_threshold: 2,
            kms_shards: 3,
            freshness_window: DEFAULT_FRESHNESS_WINDOW,
            seed: 0,
            log_events: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroizationSweep {
    pub sessions: u64,
    pub violations: u64,
}

pub struct Protocol {
    params: ProtocolParams,
    registry: ApprovedRegistry,
    kms: Kms,
    root: AttestationRoot,
    da: DaStore,
    actors: BTreeMap<ActorId, Actor>,
    signers: BTreeMap<ActorId, EcdsaSigner>,
    submissions: Vec<Submission>,
    pending: BTreeSet<u64>,
    events: EventLog,
    taint: TaintLedger,
    now: u64,
    burned: u64,
    genesis_stake: u64,
    rng: ChaCha20Rng,
    nonce_label: Vec<u8>,
    sessions: u64,
    sweep: ZeroizationSweep,
    last_record: BTreeMap<ActorId, (Vec<u8>, Receipt)>,
    seal_roots: BTreeMap<u64, Hash32>,
}

impl Protocol {
    pub fn new(config: ProtocolConfig) -> Result<Self, ProtocolError> {
        config.params.validate()?;
        let seed_bytes = config.seed.to_be_bytes();
        let root = AttestationRoot::from_seed(&seed_bytes);
        let policy = QuotePolicy {
            root: root.public_key(),
            approved: config.registry.approved_measurements(),
            freshness_window: config.freshness_window,
        };
        let kms = Kms::new(policy, config.kms_threshold, config.kms_shards, config.seed)?;
        let mut registry = config.registry;
        registry.key_epochs = kms.epoch_table().clone();
        let mut events = EventLog::new(config.log_events);
        if config.params.delta == 0 {
            events.push(Event::Warning { epoch: 0, message: "delta is 0: results finalize at submission and cannot be challenged".into() });
        }
        Ok(Self {
            params: config.params,
            registry,
            kms,
            root,
            da: DaStore::new(),
            actors: BTreeMap::new(),
            signers: BTreeMap::new(),
            submissions: Vec::new(),
            pending: BTreeSet::new(),
            events,
            taint: TaintLedger::default(),
            now: 0,
            burned: 0,
            genesis_stake: 0,
            rng: ChaCha20Rng::seed_from_u64(config.seed ^ 0x5EED_0F_E4C1),
            nonce_label: [b"protocol".as_slice(), &seed_bytes].concat(),
            sessions: 0,
            sweep: ZeroizationSweep::default(),
            last_record: BTreeMap::new(),
            seal_roots: BTreeMap::new(),
        })
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn registry(&self) -> &ApprovedRegistry {
        &self.registry
    }

    pub fn kms(&self) -> &Kms {
        &self.kms
    }

    pub fn attestation_root(&self) -> &AttestationRoot {
        &self.root
    }

    pub fn da(&self) -> &DaStore {
        &self.da
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn taint(&self) -> &TaintLedger {
        &self.taint
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn burned(&self) -> u64 {
        self.burned
    }

    pub fn sweep(&self) -> ZeroizationSweep {
        self.sweep
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.submissions
    }

    pub fn submission(&self, id: u64) -> Result<&Submission, ProtocolError> {
        self.submissions.get(id as usize).ok_or(ProtocolError::UnknownSubmission(id))
    }

    pub fn actors(&self) -> impl Iterator<Item = &Actor> {
        self.actors.values()
    }

    pub fn actor(&self, id: ActorId) -> Result<&Actor, ProtocolError> {
        self.actors.get(&id).ok_or(ProtocolError::UnknownActor(id))
    }

    pub fn operator_key(&self, id: ActorId) -> Result<PublicKey, ProtocolError> {
        self.signers.get(&id).map(|s| s.public_key()).ok_or(ProtocolError::UnknownActor(id))
    }

    pub fn total_stake(&self) -> u64 {
        self.actors.values().map(|a| a.stake).sum()
    }

    /// Total stake plus everything burned equals the stake present at registration.
    pub fn stake_conserved(&self) -> bool {
        self.total_stake() + self.burned == self.genesis_stake
    }

    /// Mutable access to the taint ledger and KMS for auditor sessions.
    pub fn auditor_access(&mut self, label: &[u8]) -> privacy::EnclaveKeyAccess<'_> {
        let measurement = self.approved_measurement();
        privacy::EnclaveKeyAccess::new(&mut self.kms, &self.root, measurement, self.now, label, &mut self.taint)
    }

    fn approved_measurement(&self) -> Hash32 {
        let container = self.registry.containers.iter().next().copied().unwrap_or(Hash32::ZERO);
        measurement_of(&container, &self.registry.code_version)
    }

    fn next_nonce(&mut self) -> [u8; 16] {
        self.sessions += 1;
        session_nonce(&self.nonce_label, self.sessions)
    }

    pub fn register(&mut self, role: ActorRole, stake: u64, behavior: Behavior) -> Result<ActorId, ProtocolError> {
        if !behavior.allowed_for(role) {
            return Err(ProtocolError::BadBehavior(behavior, role));
        }
        let id = ActorId(self.actors.len() as u32);
        let key = (role == ActorRole::Operator).then(|| {
            let signer = EcdsaSigner::from_seed(&[self.nonce_label.as_slice(), b"operator", &id.0.to_be_bytes()].concat());
            let pk = signer.public_key();
            self.signers.insert(id, signer);
            pk
        });
        self.actors.insert(id, Actor { id, role, stake, behavior });
        self.genesis_stake += stake;
        self.events.push(Event::Register { epoch: self.now, actor: id, role, stake, behavior, key });
        Ok(id)
    }

    fn expect_role(&self, id: ActorId, expected: ActorRole) -> Result<&Actor, ProtocolError> {
        let a = self.actor(id)?;
        if a.role != expected {
            return Err(ProtocolError::WrongRole { actor: id, role: a.role, expected });
        }
        Ok(a)
    }

    /// Operator submission: infer, sign a receipt, encrypt, publish, open the window.
    pub fn submit(&mut self, operator: ActorId, client: ActorId, exec: &ExecutionTuple) -> Result<u64, ProtocolError> {
        let op = self.expect_role(operator, ActorRole::Operator)?.clone();
        self.expect_role(client, ActorRole::Client)?;
        if op.stake == 0 {
            return Err(ProtocolError::ZeroStake(operator));
        }
        self.registry.check_exec(exec).map_err(ProtocolError::Unapproved)?;
        let id = self.submissions.len() as u64;
        let req_hash = request_hash(exec);
        self.taint.observe(Role::Client, Label::Plaintext);
        self.events.push(Event::Submit { epoch: self.now, submission: id, operator, client, req_hash });

        let (blob, receipt, injected) = match (op.behavior, self.last_record.get(&operator)) {
            (Behavior::ReplayStaleReceipt, Some((blob, receipt))) => {
                (blob.clone(), receipt.clone(), Some(Behavior::ReplayStaleReceipt))
            }
            _ => self.execute_and_package(&op, exec)?,
        };
        if op.behavior == Behavior::WithholdDa {
            self.da.set_withholding(true);
        }
        let pointer = self.da.publish(&blob);
        self.da.set_withholding(false);
        self.taint.observe(Role::Operator, Label::Ciphertext);
        self.taint.observe(Role::DaStore, Label::Ciphertext);
        self.last_record.insert(operator, (blob.clone(), receipt.clone()));
        self.events.push(Event::Publish {
            epoch: self.now,
            submission: id,
            operator,
            pointer,
            leaf_hash: leaf_hash(&blob),
            receipt: ReceiptJson::from(&receipt),
        });
        self.submissions.push(Submission {
            id,
            operator,
            client,
            request_hash: req_hash,
            receipt,
            da_pointer: pointer,
            published_at: self.now,
            status: SubmissionStatus::Pending,
            injected,
            challenged: false,
        });
        self.pending.insert(id);
        if self.params.delta == 0 {
            self.finalize(id, "zero_window");
        }
        Ok(id)
    }

    /// Runs the operator's enclave and returns the DA blob and receipt.
    fn execute_and_package(
        &mut self,
        op: &Actor,
        exec: &ExecutionTuple,
    ) -> Result<(Vec<u8>, Receipt, Option<Behavior>), ProtocolError> {
        let mut injected = None;
        let mut container = Hash32(*exec.container_digest());
        self.taint.observe(Role::EnclaveContext, Label::Plaintext);
        let out = match op.behavior {
            Behavior::FalsifyOutput => {
                injected = Some(Behavior::FalsifyOutput);
                falsify(&detcore::infer(exec)?)
            }
            Behavior::SubstituteContainer => {
                injected = Some(Behavior::SubstituteContainer);
                container = hash_parts(&[b"patched", container.as_bytes()]);
                detcore::infer(&exec.with_model(format!("{}+patched", exec.model_id())))?
            }
            Behavior::WithholdDa => {
                injected = Some(Behavior::WithholdDa);
                detcore::infer(exec)?
            }
            _ => detcore::infer(exec)?,
        };
        let nonce = self.next_nonce();
        let quote = self.root.attest(measurement_of(&container, &self.registry.code_version), nonce, self.now);
        let (key_epoch, app_key) = self.kms.active_epoch();
        let ctx = ReceiptContext {
            chain_id: self.registry.chain_id.clone(),
            da_pointer: self.da.next_pointer(),
            key_epoch,
            timestamp: self.now,
            att_quote: Some(quote.canonical_encode()),
        };
        let signer = self.signers.get(&op.id).expect("operators have signers");
        let receipt = make_receipt(exec, &out, signer, ctx)?;
        let ciphertext = privacy::encrypt_payload(&app_key, key_epoch, &exec.canonical_encode(), out.canonical_bytes(), &mut self.rng)?;
        self.taint.observe(Role::Operator, Label::Commitment);
        let blob = DaRecord { ciphertext, receipt: receipt.clone() }.canonical_encode();
        Ok((blob, receipt, injected))
    }

    /// Client-side check of the returned receipt against its own request.
    pub fn client_check(&mut self, id: u64, exec: &ExecutionTuple) -> Result<bool, ProtocolError> {
        let sub = self.submission(id)?.clone();
        let pk = self.operator_key(sub.operator)?;
        let ok = sub.receipt.body.req_hash == request_hash(exec) && check_receipt(&sub.receipt, &pk, &self.registry).is_ok();
        self.events.push(Event::ClientCheck { epoch: self.now, submission: id, client: sub.client, ok });
        Ok(ok)
    }

    /// Seals the open DA batch and records its root.
    pub fn seal_da(&mut self) -> Option<(u64, Hash32)> {
        let sealed = self.da.seal(self.now);
        if let Some((slot, root)) = sealed {
            self.seal_roots.insert(slot, root);
            self.events.push(Event::Seal { epoch: self.now, slot, root });
        }
        sealed
    }

    fn ensure_sealed(&mut self, slot: u64) {
        if !self.da.is_sealed(slot) {
            self.seal_da();
        }
    }

    /// One actor's re-execution of a submission inside a fresh enclave session.
    fn reexecute_as(&mut self, actor: ActorId, sub: &Submission, sessions: &mut Vec<EnclaveContext>) -> VoteOutcome {
        let reject = |reason| VoteOutcome { vote: Vote::Reject, reason, output_hash: None };
        let behavior = self.actors[&actor].behavior;
        match behavior {
            Behavior::Offline => return VoteOutcome { vote: Vote::Abstain, reason: VoteReason::Offline, output_hash: None },
            Behavior::Colluding => return VoteOutcome { vote: Vote::Uphold, reason: VoteReason::Colluding, output_hash: None },
            _ => {}
        }
        let blob = match self.da.fetch_with_proof(sub.da_pointer) {
            Ok((blob, proof)) => {
                let trusted = self.seal_roots.get(&sub.da_pointer.slot_id);
                if !trusted.is_some_and(|root| verify_inclusion(&proof, root)) {
                    return reject(VoteReason::BadInclusion);
                }
                blob
            }
            Err(DaError::Unavailable(_) | DaError::NotFound(_) | DaError::Pruned(_)) => return reject(VoteReason::Unavailable),
            Err(_) => return reject(VoteReason::BadInclusion),
        };
        self.taint.observe(Role::Verifier, Label::Ciphertext);
        let Ok(record) = DaRecord::canonical_decode(&blob) else {
            return reject(VoteReason::BadRecord);
        };
        if record.receipt != sub.receipt {
            return reject(VoteReason::ReceiptMismatch);
        }
        let body = &record.receipt.body;
        let pk = self.signers[&sub.operator].public_key();
        if check_receipt(&record.receipt, &pk, &self.registry).is_err() {
            return reject(VoteReason::BadReceipt);
        }
        if let Some(q) = &body.att_quote {
            let approved = AttestationQuote::canonical_decode(q)
                .ok()
                .is_some_and(|q| self.kms.policy().check(&q, q.issued_at).is_ok());
            if !approved {
                return reject(VoteReason::UnapprovedQuote);
            }
        }

        let nonce = self.next_nonce();
        let mut ctx = EnclaveContext::new(self.approved_measurement());
        let quote = ctx.attest(&self.root, nonce, self.now);
        let provisioned = provision(&mut self.kms, &mut ctx, &quote, body.key_epoch, self.now);
        let outcome = match provisioned {
            Err(_) => VoteOutcome { vote: Vote::Abstain, reason: VoteReason::KeyUnavailable, output_hash: None },
            Ok(()) => match ctx.reexecute(&record.ciphertext) {
                Err(privacy::PrivacyError::Reexec(_)) => {
                    self.taint.observe(Role::EnclaveContext, Label::Plaintext);
                    reject(VoteReason::RequestMismatch)
                }
                Err(_) => reject(VoteReason::DecryptFailed),
                Ok(report) => {
                    self.taint.observe(Role::EnclaveContext, Label::Plaintext);
                    let reason = if report.request_hash != sub.request_hash || report.request_hash != body.req_hash {
                        VoteReason::RequestMismatch
                    } else if report.environment != EnvironmentSummary::of_receipt(body) {
                        VoteReason::EnvironmentMismatch
                    } else if report.recomputed_output_hash != body.out_hash || report.published_output_hash != body.out_hash {
                        VoteReason::OutputMismatch
                    } else {
                        VoteReason::Match
                    };
                    let vote = if reason == VoteReason::Match { Vote::Uphold } else { Vote::Reject };
                    VoteOutcome { vote, reason, output_hash: Some(report.recomputed_output_hash) }
                }
            },
        };
        ctx.zeroize();
        sessions.push(ctx);
        outcome
    }

    fn sweep_sessions(&mut self, sessions: Vec<EnclaveContext>) {
        for ctx in sessions {
            self.sweep.sessions += 1;
            if ctx.holds_key() || !ctx.key_buffer_clear() {
                self.sweep.violations += 1;
            }
        }
    }

    fn pending_index(&self, id: u64) -> Result<usize, ProtocolError> {
        let sub = self.submission(id)?;
        if sub.status != SubmissionStatus::Pending {
            return Err(ProtocolError::NotPending(id, sub.status));
        }
        Ok(id as usize)
    }

    /// Re-execution by a small uniformly drawn sample of watchers (or verifiers
    /// when there are no watchers). Never changes stake or status.
    pub fn light_audit(&mut self, id: u64, seed: [u8; 32]) -> Result<AuditReport, ProtocolError> {
        let idx = self.pending_index(id)?;
        let sub = self.submissions[idx].clone();
        self.ensure_sealed(sub.da_pointer.slot_id);
        let role = if self.actors.values().any(|a| a.role == ActorRole::Watcher) { ActorRole::Watcher } else { ActorRole::Verifier };
        let pool: Vec<(ActorId, u64)> = self.actors.values().filter(|a| a.role == role).map(|a| (a.id, 1)).collect();
        let size = self.params.light_audit_size.min(pool.len());
        let auditors = sample_committee(&pool, size, seed)?;
        let mut sessions = Vec::new();
        let mut results = Vec::new();
        for a in auditors {
            let o = self.reexecute_as(a, &sub, &mut sessions);
            let result = match o.reason {
                VoteReason::Match | VoteReason::Colluding => AuditResult::Match,
                VoteReason::Offline | VoteReason::KeyUnavailable => AuditResult::Offline,
                VoteReason::Unavailable => AuditResult::Unavailable,
                _ => AuditResult::Mismatch,
            };
            self.events.push(Event::Audit {
                epoch: self.now,
                submission: id,
                auditor: a,
                result: serde_json::to_value(result).expect("json").as_str().unwrap_or_default().to_string(),
            });
            results.push((a, result));
        }
        self.sweep_sessions(sessions);
        Ok(AuditReport { submission: id, results })
    }

    /// Full challenge: committee re-execution, tally against tau, then slash or finalize.
    pub fn full_challenge(&mut self, id: u64, challenger: ActorId) -> Result<ChallengeVerdict, ProtocolError> {
        self.actor(challenger)?;
        let idx = self.pending_index(id)?;
        let sub = self.submissions[idx].clone();
        if self.now > sub.published_at + self.params.delta {
            return Err(ProtocolError::WindowExpired(id));
        }
        let key_epoch = sub.receipt.body.key_epoch;
        if self.registry.epoch_status(key_epoch) != Some(EpochStatus::Active) {
            return Err(ProtocolError::EpochRetired(key_epoch));
        }
        self.ensure_sealed(sub.da_pointer.slot_id);
        let candidates: Vec<(ActorId, u64)> = self
            .actors
            .values()
            .filter(|a| a.role == ActorRole::Verifier)
            .map(|a| (a.id, a.stake))
            .collect();
        let members = sample_committee(&candidates, self.params.committee_size, committee_seed(&sub.request_hash, self.now))?;
        self.submissions[idx].challenged = true;
        self.events.push(Event::Challenge { epoch: self.now, submission: id, challenger, committee: members.clone() });

        let mut sessions = Vec::new();
        let mut outcomes = Vec::with_capacity(members.len());
        for &m in &members {
            let o = self.reexecute_as(m, &sub, &mut sessions);
            self.events.push(Event::Vote {
                epoch: self.now,
                submission: id,
                verifier: m,
                vote: o.vote,
                reason: o.reason.as_str().into(),
                output_hash: o.output_hash,
            });
            outcomes.push(o);
        }
        let votes: Vec<Vote> = outcomes.iter().map(|o| o.vote).collect();
        let t = tally(&votes, self.params.tau);
        let majority_output_hash = majority_hash(&outcomes);
        self.events.push(Event::Verdict {
            epoch: self.now,
            submission: id,
            yes: t.yes,
            total: t.total,
            upheld: t.upheld,
            majority_output_hash,
        });
        let committee: Vec<(ActorId, u64)> = members.iter().map(|m| (*m, self.actors[m].stake)).collect();
        let honest_rejections = outcomes
            .iter()
            .filter(|o| o.vote == Vote::Reject && o.output_hash.is_some())
            .count() as u64;
        let mut slash = None;
        let mut backstop_alert = false;
        let outcome = if t.upheld {
            if honest_rejections > 0 {
                backstop_alert = true;
                self.events.push(Event::BackstopAlert { epoch: self.now, submission: id, honest_rejections });
            }
            self.finalize(id, "challenge_upheld");
            ChallengeOutcome::Upheld
        } else {
            slash = Some(self.slash(id, sub.operator, challenger, &committee));
            ChallengeOutcome::Slashed
        };
        self.sweep_sessions(sessions);
        Ok(ChallengeVerdict {
            submission: id,
            committee,
            votes,
            reasons: outcomes.iter().map(|o| o.reason).collect(),
            tally: t,
            outcome,
            majority_output_hash,
            slash,
            backstop_alert,
        })
    }

    fn slash(&mut self, id: u64, operator: ActorId, challenger: ActorId, committee: &[(ActorId, u64)]) -> SlashDistribution {
        let available = self.actors[&operator].stake;
        let d = distribute_slash(available, self.params.s_slash, self.params.alpha, self.params.beta, challenger, committee);
        self.actors.get_mut(&operator).expect("operator").stake -= d.amount;
        self.actors.get_mut(&challenger).expect("challenger").stake += d.challenger_reward;
        for (m, r) in &d.committee_rewards {
            self.actors.get_mut(m).expect("member").stake += r;
        }
        self.burned += d.burned;
        self.submissions[id as usize].status = SubmissionStatus::Slashed;
        self.pending.remove(&id);
        if d.capped {
            self.events.push(Event::Warning { epoch: self.now, message: format!("slash of {operator} capped at {}", d.amount) });
        }
        self.events.push(Event::Slash { epoch: self.now, submission: id, operator, distribution: d.clone() });
        debug_assert!(self.stake_conserved());
        d
    }

    fn finalize(&mut self, id: u64, reason: &str) {
        self.submissions[id as usize].status = SubmissionStatus::Finalized;
        self.pending.remove(&id);
        self.events.push(Event::Finalize { epoch: self.now, submission: id, reason: reason.into() });
    }

    /// Finalizes every pending submission whose window has passed.
    pub fn finalize_expired(&mut self) -> Vec<u64> {
        let expired: Vec<u64> = self
            .pending
            .iter()
            .map(|&id| &self.submissions[id as usize])
            .take_while(|s| s.published_at + self.params.delta < self.now)
            .map(|s| s.id)
            .collect();
        for &id in &expired {
            self.finalize(id, "window_expired");
        }
        expired
    }

    /// Ends the current epoch: seal, tick the clock, finalize, prune.
    pub fn advance_epoch(&mut self) -> Vec<u64> {
        self.seal_da();
        self.now += 1;
        let finalized = self.finalize_expired();
        let slots = self.da.prune(self.now, self.params.delta + 1);
        if !slots.is_empty() {
            self.events.push(Event::Prune { epoch: self.now, slots });
        }
        finalized
    }

    pub fn rotate_key_epoch(&mut self, approval: GovernanceApproval) -> Result<u32, ProtocolError> {
        let (epoch, public_key) = self.kms.rotate_epoch(approval)?;
        self.registry.key_epochs = self.kms.epoch_table().clone();
        self.events.push(Event::Rotate { epoch: self.now, key_epoch: epoch, public_key });
        Ok(epoch)
    }

    /// A share request from an actor without a valid fresh quote.
    pub fn rogue_share_request(&mut self, requester: ActorId, kind: RogueRequest) -> Result<RogueOutcome, ProtocolError> {
        self.actor(requester)?;
        let nonce = self.next_nonce();
        let quote = match kind {
            RogueRequest::StaleQuote => {
                let age = self.kms.policy().freshness_window + 1;
                if self.now < age {
                    return Err(ProtocolError::TooEarlyForStaleQuote(age));
                }
                self.root.attest(self.approved_measurement(), nonce, self.now - age)
            }
            RogueRequest::UnapprovedMeasurement => self.root.attest(hash_commit(b"unapproved-enclave"), nonce, self.now),
            RogueRequest::ForgedQuote => AttestationRoot::from_seed(b"forged").attest(self.approved_measurement(), nonce, self.now),
        };
        let (epoch, _) = self.kms.active_epoch();
        let mut released = 0;
        let mut denials = Vec::new();
        for i in 0..self.kms.shard_count() {
            match self.kms.release_share(i, &quote, epoch, self.now) {
                Ok(_) => released += 1,
                Err(d) => {
                    self.events.push(Event::ShareDenied { epoch: self.now, requester, shard: i as u8 + 1, denial: d });
                    denials.push((i as u8 + 1, d));
                }
            }
        }
        self.events.push(Event::ShareRequest { epoch: self.now, requester, kind: format!("{kind:?}"), released });
        Ok(RogueOutcome { released, denials })
    }
}

/// Most common re-executed output hash; ties go to the smaller hash.
fn majority_hash(outcomes: &[VoteOutcome]) -> Hash32 {
    let mut counts: BTreeMap<Hash32, usize> = BTreeMap::new();
    for h in outcomes.iter().filter_map(|o| o.output_hash) {
        *counts.entry(h).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(Hash32::ZERO, |(h, _)| h)
}

/// Changes the last generated token, or appends one to an empty output.
pub fn falsify(out: &InferenceOutput) -> InferenceOutput {
    let mut tokens = out.tokens().to_vec();
    match tokens.last_mut() {
        Some(t) => *t = (*t + 1) % VOCAB_SIZE as u32,
        None => tokens.push(0),
    }
    InferenceOutput::new(tokens, out.logits_trace())
}

pub fn honest_output_hash(exec: &ExecutionTuple) -> Result<Hash32, ProtocolError> {
    Ok(output_hash(&detcore::infer(exec)?))
}
