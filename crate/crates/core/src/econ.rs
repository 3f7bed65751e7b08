//! Deterrence economics: closed-form cheating utility and a Monte Carlo
//! estimate driven through the real protocol.

use detcore::{DecodePolicy, ExecutionTuple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::hash_parts;
use crate::protocol::{ActorRole, Behavior, Protocol, ProtocolConfig, ProtocolError, ProtocolParams, SubmissionStatus};
use crate::ratio::Ratio;
use crate::registry::ApprovedRegistry;

#[derive(Debug, Error)]
pub enum EconError {
    #[error("invalid economic parameter {field}: {reason}")]
    Invalid { field: &'static str, reason: &'static str },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

fn invalid(field: &'static str, reason: &'static str) -> EconError {
    EconError::Invalid { field, reason }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconParams {
    /// Probability that a given result is challenged.
    pub pi_c: f64,
    /// Gain from one undetected cheat, in stake units.
    pub gain: u64,
    pub s_slash: u64,
    #[serde(default = "default_alpha")]
    pub alpha: Ratio,
    #[serde(default = "default_beta")]
    pub beta: Ratio,
}

fn default_alpha() -> Ratio {
    ProtocolParams::default().alpha
}

fn default_beta() -> Ratio {
    ProtocolParams::default().beta
}

impl EconParams {
    pub fn new(pi_c: f64, gain: u64, s_slash: u64) -> Self {
        Self { pi_c, gain, s_slash, alpha: default_alpha(), beta: default_beta() }
    }

    pub fn validate(&self) -> Result<(), EconError> {
        if !(0.0..=1.0).contains(&self.pi_c) {
            return Err(invalid("pi_c", "must lie in [0, 1]"));
        }
        if self.s_slash == 0 {
            return Err(invalid("s_slash", "must be positive"));
        }
        match self.alpha.checked_add(&self.beta) {
            Some(s) if s <= Ratio::ONE => Ok(()),
            _ => Err(invalid("alpha", "alpha + beta must not exceed 1")),
        }
    }
}

/// Expected utility of cheating once: (1 - pi) * G - pi * S.
pub fn expected_gain(p: &EconParams) -> f64 {
    (1.0 - p.pi_c) * p.gain as f64 - p.pi_c * p.s_slash as f64
}

/// Challenge probability at which expected cheating utility is exactly zero.
pub fn break_even_probability(gain: u64, s_slash: u64) -> Result<f64, EconError> {
    if s_slash == 0 {
        return Err(invalid("s_slash", "must be positive"));
    }
    Ok(gain as f64 / (gain as f64 + s_slash as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deterrence {
    /// G / S: any challenge probability above this makes cheating a loss.
    pub threshold: f64,
    /// False when the threshold exceeds 1, so no audit rate deters.
    pub deterrable: bool,
}

pub fn critical_challenge_probability(gain: u64, s_slash: u64) -> Result<Deterrence, EconError> {
    if s_slash == 0 {
        return Err(invalid("s_slash", "must be positive"));
    }
    let threshold = gain as f64 / s_slash as f64;
    Ok(Deterrence { threshold, deterrable: threshold <= 1.0 })
}

/// Probability that at least one of two independent mechanisms challenges.
pub fn compose_challenge_probability(p_audit: f64, p_user: f64) -> f64 {
    1.0 - (1.0 - p_audit) * (1.0 - p_user)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Honest,
    Cheat,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Honest => "honest",
            Strategy::Cheat => "cheat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: u64,
}

impl Estimate {
    fn of(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 { samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, stderr: (var / n).sqrt(), trials: samples.len() as u64 }
    }

    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr + 1e-9
    }
}

fn trial_exec(registry: &ApprovedRegistry, seed: u64, trial: u64) -> (ExecutionTuple, f64) {
    let h = hash_parts(&[b"econ-trial", &seed.to_be_bytes(), &trial.to_be_bytes()]);
    let mut rng = ChaCha20Rng::from_seed(h.0);
    let container = registry.containers.iter().next().copied().unwrap_or_default();
    let exec = ExecutionTuple::new(
        registry.models.iter().next().cloned().unwrap_or_default(),
        container.0,
        registry.archs.iter().next().cloned().unwrap_or_default(),
        registry.drivers.iter().next().cloned().unwrap_or_default(),
        DecodePolicy::greedy(2),
        rng.gen(),
        vec![rng.gen_range(0..64), rng.gen_range(0..64)],
    );
    (exec, rng.gen::<f64>())
}

/// Per-inference utility of `strategy`, measured by running each trial through
/// a live protocol with an honest three-member committee. A cheating result that
/// survives its window earns `gain`; a challenged one loses whatever was slashed.
pub fn monte_carlo_utility(strategy: Strategy, params: &EconParams, trials: u64, seed: u64) -> Result<Estimate, EconError> {
    params.validate()?;
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let protocol_params = ProtocolParams { s_slash: params.s_slash, alpha: params.alpha, beta: params.beta, ..ProtocolParams::default() };
    let mut p = Protocol::new(ProtocolConfig { params: protocol_params, seed, log_events: false, ..ProtocolConfig::default() })?;
    let behavior = match strategy {
        Strategy::Honest => Behavior::Honest,
        Strategy::Cheat => Behavior::FalsifyOutput,
    };
    let stake = params.s_slash.saturating_mul(trials + 1);
    let op = p.register(ActorRole::Operator, stake, behavior)?;
    let challenger = p.register(ActorRole::Client, 0, Behavior::Honest)?;
    for _ in 0..3 {
        p.register(ActorRole::Verifier, 100, Behavior::Honest)?;
    }
    let registry = p.registry().clone();
    let mut stake_delta = Vec::with_capacity(trials as usize);
    for trial in 0..trials {
        let (exec, draw) = trial_exec(&registry, seed, trial);
        let before = p.actor(op)?.stake;
        let id = p.submit(op, challenger, &exec)?;
        if draw < params.pi_c {
            p.full_challenge(id, challenger)?;
        }
        assert!(p.stake_conserved(), "stake not conserved in trial {trial}");
        stake_delta.push((id, p.actor(op)?.stake as f64 - before as f64));
        p.advance_epoch();
    }
    for _ in 0..=p.params().delta {
        p.advance_epoch();
    }
    let samples: Vec<f64> = stake_delta
        .into_iter()
        .map(|(id, delta)| {
            let sub = &p.submissions()[id as usize];
            let undetected = sub.status == SubmissionStatus::Finalized && sub.injected.is_some();
            delta + if undetected { params.gain as f64 } else { 0.0 }
        })
        .collect();
    Ok(Estimate::of(&samples))
}

/// One row of a payoff sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffRow {
    pub pi_c: f64,
    #[serde(rename = "G")]
    pub gain: u64,
    #[serde(rename = "S_slash")]
    pub s_slash: u64,
    pub strategy: Strategy,
    pub mean_utility: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub pi_c: Vec<f64>,
    pub gain: Vec<u64>,
    pub s_slash: Vec<u64>,
    #[serde(default = "both_strategies")]
    pub strategies: Vec<Strategy>,
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: Ratio,
    #[serde(default = "default_beta")]
    pub beta: Ratio,
}

fn both_strategies() -> Vec<Strategy> {
    vec![Strategy::Honest, Strategy::Cheat]
}

/// Monte Carlo utility over every grid point, in grid order.
pub fn payoff_sweep(grid: &SweepGrid) -> Result<Vec<PayoffRow>, EconError> {
    let mut rows = Vec::new();
    for &s_slash in &grid.s_slash {
        for &gain in &grid.gain {
            for &pi_c in &grid.pi_c {
                for &strategy in &grid.strategies {
                    let params = EconParams { pi_c, gain, s_slash, alpha: grid.alpha, beta: grid.beta };
                    let e = monte_carlo_utility(strategy, &params, grid.trials, grid.seed)?;
                    rows.push(PayoffRow { pi_c, gain, s_slash, strategy, mean_utility: e.mean, stderr: e.stderr });
                }
            }
        }
    }
    Ok(rows)
}
