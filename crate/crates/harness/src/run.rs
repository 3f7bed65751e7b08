//! Discrete-event scenario runner.

use std::collections::BTreeSet;

use detcore::{DecodePolicy, ExecutionTuple, VOCAB_SIZE};
use optiverify::da::BatchDump;
use optiverify::privacy::Role;
use optiverify::protocol::{
    ActorId, ActorRole, Behavior, ChallengeVerdict, Protocol, ProtocolConfig, ProtocolError, RogueRequest, SubmissionStatus,
    VoteReason,
};
use optiverify::registry::ApprovedRegistry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Adversary, ConfigError, ScenarioConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorStake {
    pub actor: ActorId,
    pub role: ActorRole,
    pub behavior: Behavior,
    pub stake: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub submissions: u64,
    pub finalized: u64,
    pub challenges: u64,
    pub light_audits: u64,
    pub frauds_injected: u64,
    /// Fraudulent results that were slashed.
    pub frauds_detected: u64,
    /// Fraudulent results challenged before a committee with at least tau honest members.
    pub frauds_challenged_with_honest_majority: u64,
    /// Honest results that were slashed.
    pub false_slashes: u64,
    /// Challenges in which a committee member could not retrieve the DA record.
    pub availability_failures: u64,
    pub backstop_alerts: u64,
    pub client_check_failures: u64,
    pub rogue_share_requests: u64,
    pub rogue_shares_released: u64,
    pub share_denials: u64,
    /// Plaintext observations by roles other than client and enclave.
    pub plaintext_exposures: u64,
    pub plaintext_holders: BTreeSet<Role>,
    pub enclave_sessions: u64,
    pub zeroization_violations: u64,
    pub burned: u64,
    pub stake_conserved: bool,
    pub final_stakes: Vec<ActorStake>,
}

pub struct ScenarioRun {
    pub metrics: RunMetrics,
    pub protocol: Protocol,
    pub challenges: Vec<ChallengeVerdict>,
    /// DA contents after the last scheduled epoch, before the closing epochs prune them.
    pub da_snapshot: Vec<BatchDump>,
}

impl ScenarioRun {
    pub fn log(&self) -> String {
        self.protocol.events().to_ndjson()
    }
}

struct Population {
    operators: Vec<ActorId>,
    clients: Vec<ActorId>,
    watchers: Vec<ActorId>,
}

fn populate(p: &mut Protocol, config: &ScenarioConfig) -> Result<Population, RunError> {
    let mut operators = Vec::new();
    for (stake, behavior) in config.operator_behaviors()? {
        operators.push(p.register(ActorRole::Operator, stake, behavior)?);
    }
    let v = &config.verifiers;
    let colluding = config.colluding_verifiers();
    for i in 0..v.count {
        let behavior = if i < colluding {
            Behavior::Colluding
        } else if i < colluding + v.offline {
            Behavior::Offline
        } else {
            Behavior::Honest
        };
        p.register(ActorRole::Verifier, v.stake, behavior)?;
    }
    let watchers = (0..config.watchers).map(|_| p.register(ActorRole::Watcher, 0, Behavior::Honest)).collect::<Result<_, _>>()?;
    let clients = (0..config.clients.count).map(|_| p.register(ActorRole::Client, 0, Behavior::Honest)).collect::<Result<_, _>>()?;
    Ok(Population { operators, clients, watchers })
}

fn random_exec(rng: &mut ChaCha20Rng, registry: &ApprovedRegistry, policies: &[DecodePolicy], config: &ScenarioConfig) -> ExecutionTuple {
    let pick = |set: &BTreeSet<String>, r: &mut ChaCha20Rng| set.iter().nth(r.gen_range(0..set.len())).cloned().unwrap_or_default();
    let model = pick(&registry.models, rng);
    let arch = pick(&registry.archs, rng);
    let driver = pick(&registry.drivers, rng);
    let container = registry.containers.iter().next().copied().unwrap_or_default();
    let policy = policies[rng.gen_range(0..policies.len())];
    let (lo, hi) = config.clients.prompt_len;
    let len = rng.gen_range(lo..=hi);
    let prompt = (0..len).map(|_| rng.gen_range(0..VOCAB_SIZE as u32)).collect();
    ExecutionTuple::new(model, container.0, arch, driver, policy, rng.gen(), prompt)
}

fn honest_majority(p: &Protocol, verdict: &ChallengeVerdict) -> bool {
    let honest = verdict
        .committee
        .iter()
        .filter(|(id, _)| p.actor(*id).is_ok_and(|a| a.behavior == Behavior::Honest))
        .count();
    p.params().tau.is_met_by(honest as u64, verdict.committee.len() as u64)
}

/// Runs a scenario to completion. The result, including the event log, is a
/// pure function of the configuration.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun, RunError> {
    config.validate()?;
    let mut p = Protocol::new(ProtocolConfig {
        params: config.params.clone(),
        kms_threshold: config.kms.threshold,
        kms_shards: config.kms.shards,
        seed: config.seed,
        ..ProtocolConfig::default()
    })?;
    let pop = populate(&mut p, config)?;
    let policies = config.decode_policies()?;
    let registry = p.registry().clone();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut m = RunMetrics::default();
    let mut challenges = Vec::new();
    let mut request_counter = 0usize;

    for _ in 0..config.epochs {
        let mut fresh = Vec::new();
        for &client in &pop.clients {
            for _ in 0..config.clients.requests_per_epoch {
                let exec = random_exec(&mut rng, &registry, &policies, config);
                let operator = pop.operators[request_counter % pop.operators.len()];
                request_counter += 1;
                let id = p.submit(operator, client, &exec)?;
                let ok = p.client_check(id, &exec)?;
                if !ok {
                    m.client_check_failures += 1;
                }
                fresh.push((id, client, ok));
            }
        }
        for (tag, kind) in [(Adversary::StaleQuoteKms, RogueRequest::StaleQuote), (Adversary::NonAttestedShareRequest, RogueRequest::UnapprovedMeasurement)] {
            let possible = kind != RogueRequest::StaleQuote || p.now() > p.kms().policy().freshness_window;
            if config.adversaries.contains(&tag) && possible {
                let o = p.rogue_share_request(pop.clients[0], kind)?;
                m.rogue_share_requests += 1;
                m.rogue_shares_released += o.released;
                m.share_denials += o.denials.len() as u64;
            }
        }
        p.seal_da();
        for (id, client, client_ok) in fresh {
            if p.submission(id)?.status != SubmissionStatus::Pending {
                continue;
            }
            let audit_draw: f64 = rng.gen();
            let challenge_draw: f64 = rng.gen();
            let audit_seed: [u8; 32] = rng.gen();
            let mut challenger = (!client_ok).then_some(client);
            if audit_draw < config.audit_rate {
                let report = p.light_audit(id, audit_seed)?;
                m.light_audits += 1;
                if report.raises_alarm() {
                    challenger = challenger.or(pop.watchers.first().copied()).or(Some(client));
                }
            }
            if challenge_draw < config.challenge_rate() {
                challenger = challenger.or(Some(client));
            }
            if let Some(challenger) = challenger {
                let verdict = p.full_challenge(id, challenger)?;
                m.challenges += 1;
                let fraud = p.submission(id)?.injected.is_some();
                if fraud && honest_majority(&p, &verdict) {
                    m.frauds_challenged_with_honest_majority += 1;
                }
                if verdict.reasons.contains(&VoteReason::Unavailable) {
                    m.availability_failures += 1;
                }
                m.backstop_alerts += u64::from(verdict.backstop_alert);
                challenges.push(verdict);
            }
        }
        p.advance_epoch();
    }
    let da_snapshot = p.da().dump();
    for _ in 0..=p.params().delta {
        p.advance_epoch();
    }

    for s in p.submissions() {
        m.submissions += 1;
        let fraud = s.injected.is_some();
        m.frauds_injected += u64::from(fraud);
        match s.status {
            SubmissionStatus::Slashed if fraud => m.frauds_detected += 1,
            SubmissionStatus::Slashed => m.false_slashes += 1,
            SubmissionStatus::Finalized => m.finalized += 1,
            SubmissionStatus::Pending => {}
        }
    }
    m.plaintext_exposures = p.taint().exposures();
    m.plaintext_holders = p.taint().plaintext_holders();
    m.enclave_sessions = p.sweep().sessions;
    m.zeroization_violations = p.sweep().violations;
    m.burned = p.burned();
    m.stake_conserved = p.stake_conserved();
    m.final_stakes = p.actors().map(|a| ActorStake { actor: a.id, role: a.role, behavior: a.behavior, stake: a.stake }).collect();
    Ok(ScenarioRun { metrics: m, protocol: p, challenges, da_snapshot })
}
