//! Scenario configuration, read from JSON.

use std::path::Path;

use detcore::DecodePolicy;
use optiverify::econ::EconParams;
use optiverify::protocol::{Behavior, ProtocolParams};
use optiverify::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Field { field: String, reason: String },
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Json(#[from] serde_json::Error),
}

fn field_error(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.into(), reason: reason.into() }
}

/// Adversary strategies a scenario can switch on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    FalsifyOutput,
    SubstituteContainer,
    ReplayStaleReceipt,
    WithholdDa,
    ColludingVerifiers,
    StaleQuoteKms,
    NonAttestedShareRequest,
}

impl Adversary {
    /// The operator strategy this tag installs, if it is an operator attack.
    pub fn operator_behavior(self) -> Option<Behavior> {
        match self {
            Adversary::FalsifyOutput => Some(Behavior::FalsifyOutput),
            Adversary::SubstituteContainer => Some(Behavior::SubstituteContainer),
            Adversary::ReplayStaleReceipt => Some(Behavior::ReplayStaleReceipt),
            Adversary::WithholdDa => Some(Behavior::WithholdDa),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorGroup {
    pub count: usize,
    pub stake: u64,
    #[serde(default = "honest")]
    pub behavior: Behavior,
}

fn honest() -> Behavior {
    Behavior::Honest
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierSpec {
    pub count: usize,
    pub stake: u64,
    /// Verifiers that uphold every result.
    #[serde(default)]
    pub colluding: usize,
    #[serde(default)]
    pub offline: usize,
}

impl Default for VerifierSpec {
    fn default() -> Self {
        Self { count: 5, stake: 100, colluding: 0, offline: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub count: usize,
    #[serde(default = "one")]
    pub requests_per_epoch: usize,
    /// Inclusive prompt length range.
    #[serde(default = "default_prompt_len")]
    pub prompt_len: (usize, usize),
    #[serde(default = "default_policies")]
    pub policies: Vec<String>,
}

fn one() -> usize {
    1
}

fn default_prompt_len() -> (usize, usize) {
    (2, 6)
}

fn default_policies() -> Vec<String> {
    vec!["greedy;max_tokens=4".into(), "top_k;k=5;max_tokens=4".into(), "nucleus;p=0.9;max_tokens=4".into()]
}

impl Default for ClientSpec {
    fn default() -> Self {
        Self { count: 2, requests_per_epoch: 1, prompt_len: default_prompt_len(), policies: default_policies() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmsSpec {
    pub threshold: usize,
    pub shards: usize,
}

impl Default for KmsSpec {
    fn default() -> Self {
        Self { threshold: 2, shards: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub epochs: u64,
    #[serde(default = "default_operators")]
    pub operators: Vec<OperatorGroup>,
    #[serde(default)]
    pub verifiers: VerifierSpec,
    #[serde(default = "one")]
    pub watchers: usize,
    #[serde(default)]
    pub clients: ClientSpec,
    #[serde(default)]
    pub params: ProtocolParams,
    /// Supplies the per-result user challenge probability; no user challenges when absent.
    #[serde(default)]
    pub econ: Option<EconParams>,
    /// Fraction of results that get a light audit.
    #[serde(default = "default_audit_rate")]
    pub audit_rate: f64,
    #[serde(default)]
    pub kms: KmsSpec,
    #[serde(default)]
    pub adversaries: Vec<Adversary>,
    /// Permits colluding stake at or above the vote threshold.
    #[serde(default)]
    pub stress: bool,
}

fn default_operators() -> Vec<OperatorGroup> {
    vec![OperatorGroup { count: 2, stake: 1000, behavior: Behavior::Honest }]
}

fn default_audit_rate() -> f64 {
    0.1
}

impl ScenarioConfig {
    /// Minimal honest scenario.
    pub fn honest(seed: u64, epochs: u64) -> Self {
        Self {
            seed,
            epochs,
            operators: default_operators(),
            verifiers: VerifierSpec::default(),
            watchers: 1,
            clients: ClientSpec::default(),
            params: ProtocolParams::default(),
            econ: None,
            audit_rate: default_audit_rate(),
            kms: KmsSpec::default(),
            adversaries: Vec::new(),
            stress: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn challenge_rate(&self) -> f64 {
        self.econ.as_ref().map_or(0.0, |e| e.pi_c)
    }

    pub fn decode_policies(&self) -> Result<Vec<DecodePolicy>, ConfigError> {
        self.clients
            .policies
            .iter()
            .enumerate()
            .map(|(i, p)| p.parse().map_err(|e| field_error(format!("clients.policies[{i}]"), format!("{e}"))))
            .collect()
    }

    /// Operator behaviours after adversary tags are applied, one per operator.
    pub fn operator_behaviors(&self) -> Result<Vec<(u64, Behavior)>, ConfigError> {
        let mut ops: Vec<(u64, Behavior)> =
            self.operators.iter().flat_map(|g| std::iter::repeat((g.stake, g.behavior)).take(g.count)).collect();
        for tag in &self.adversaries {
            let Some(b) = tag.operator_behavior() else { continue };
            if ops.iter().any(|(_, x)| *x == b) {
                continue;
            }
            let slot = ops
                .iter_mut()
                .find(|(_, x)| *x == Behavior::Honest)
                .ok_or_else(|| field_error("adversaries", format!("no honest operator left to run {tag:?}")))?;
            slot.1 = b;
        }
        Ok(ops)
    }

    /// Number of colluding verifiers after adversary tags are applied.
    pub fn colluding_verifiers(&self) -> usize {
        if self.verifiers.colluding == 0 && self.adversaries.contains(&Adversary::ColludingVerifiers) {
            (self.verifiers.count / 3).max(1)
        } else {
            self.verifiers.colluding
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params.validate().map_err(|e| field_error(format!("params.{}", e.field), e.reason))?;
        if self.epochs == 0 {
            return Err(field_error("epochs", "must be positive"));
        }
        let ops = self.operator_behaviors()?;
        if ops.is_empty() {
            return Err(field_error("operators", "need at least one operator"));
        }
        for (i, g) in self.operators.iter().enumerate() {
            if g.stake == 0 {
                return Err(field_error(format!("operators[{i}].stake"), "must be positive"));
            }
            if !g.behavior.is_cheating_operator() && g.behavior != Behavior::Honest {
                return Err(field_error(format!("operators[{i}].behavior"), "not an operator behavior"));
            }
        }
        let v = &self.verifiers;
        if v.count < self.params.committee_size {
            return Err(field_error("verifiers.count", "smaller than params.committee_size"));
        }
        if v.stake == 0 {
            return Err(field_error("verifiers.stake", "must be positive"));
        }
        let colluding = self.colluding_verifiers();
        if colluding + v.offline > v.count {
            return Err(field_error("verifiers", "colluding + offline exceeds count"));
        }
        if !self.stress && self.params.tau.is_met_by(colluding as u64, v.count as u64) {
            return Err(field_error("verifiers.colluding", "colluding share reaches tau; set stress to allow"));
        }
        if self.clients.count == 0 {
            return Err(field_error("clients.count", "need at least one client"));
        }
        let (lo, hi) = self.clients.prompt_len;
        if lo == 0 || lo > hi {
            return Err(field_error("clients.prompt_len", "need 1 <= min <= max"));
        }
        if self.decode_policies()?.is_empty() {
            return Err(field_error("clients.policies", "need at least one policy"));
        }
        if !(0.0..=1.0).contains(&self.audit_rate) {
            return Err(field_error("audit_rate", "must lie in [0, 1]"));
        }
        if let Some(e) = &self.econ {
            e.validate().map_err(|err| field_error("econ", err.to_string()))?;
            if e.s_slash != self.params.s_slash || e.alpha != self.params.alpha || e.beta != self.params.beta {
                return Err(field_error("econ", "s_slash, alpha and beta must match params"));
            }
        }
        if self.kms.threshold < 1 || self.kms.threshold > self.kms.shards || self.kms.shards > 255 {
            return Err(field_error("kms", "need 1 <= threshold <= shards <= 255"));
        }
        Ok(())
    }
}

/// Ratio helper for configs built in code.
pub fn ratio(num: u64, den: u64) -> Ratio {
    Ratio::new(num, den).expect("valid ratio")
}
