use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::actors::ActorId;
use crate::hash::{hash_parts, Hash32};
use crate::ratio::Ratio;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommitteeError {
    #[error("no verifier holds stake")]
    Empty,
    #[error("committee of {wanted} requested from {available} staked verifiers")]
    TooLarge { wanted: usize, available: usize },
}

/// Seed for the committee of a challenge, derived from the request and epoch.
pub fn committee_seed(request_hash: &Hash32, epoch: u64) -> [u8; 32] {
    hash_parts(&[b"committee", request_hash.as_bytes(), &epoch.to_be_bytes()]).0
}

/// Draws `size` members without replacement, each draw proportional to the
/// stake still in the pool. Zero-stake candidates are never drawn.
pub fn sample_committee(candidates: &[(ActorId, u64)], size: usize, seed: [u8; 32]) -> Result<Vec<ActorId>, CommitteeError> {
    let mut pool: Vec<(ActorId, u64)> = candidates.iter().copied().filter(|&(_, s)| s > 0).collect();
    if pool.is_empty() {
        return Err(CommitteeError::Empty);
    }
    if size > pool.len() {
        return Err(CommitteeError::TooLarge { wanted: size, available: pool.len() });
    }
    let mut rng = ChaCha20Rng::from_seed(seed);
    let mut committee = Vec::with_capacity(size);
    for _ in 0..size {
        let total: u128 = pool.iter().map(|&(_, s)| s as u128).sum();
        let mut r = rng.gen_range(0..total);
        let pick = pool
            .iter()
            .position(|&(_, s)| {
                if r < s as u128 {
                    true
                } else {
                    r -= s as u128;
                    false
                }
            })
            .expect("draw falls inside the pool");
        committee.push(pool.remove(pick).0);
    }
    Ok(committee)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Uphold,
    Reject,
    Abstain,
}

impl Vote {
    /// The byte-equality bit; abstentions count as 0.
    pub fn bit(self) -> bool {
        self == Vote::Uphold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub yes: u64,
    pub total: u64,
    pub upheld: bool,
}

/// Abstentions stay in the denominator.
pub fn tally(votes: &[Vote], tau: Ratio) -> Tally {
    let yes = votes.iter().filter(|v| v.bit()).count() as u64;
    let total = votes.len() as u64;
    Tally { yes, total, upheld: tau.is_met_by(yes, total) }
}
