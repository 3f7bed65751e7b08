use serde::{Deserialize, Serialize};

use super::actors::ActorId;
use crate::ratio::Ratio;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlashDistribution {
    pub requested: u64,
    pub amount: u64,
    /// Set when the operator held less than the requested amount.
    pub capped: bool,
    pub challenger: ActorId,
    pub challenger_reward: u64,
    pub committee_rewards: Vec<(ActorId, u64)>,
    pub burned: u64,
}

impl SlashDistribution {
    pub fn paid_out(&self) -> u64 {
        self.challenger_reward + self.committee_rewards.iter().map(|(_, r)| r).sum::<u64>()
    }
}

/// Splits a slash: floor(alpha * S) to the challenger, floor(beta * S) shared
/// pro rata by stake across the committee (each share floored), rest burned.
pub fn distribute_slash(
    available: u64,
    s_slash: u64,
    alpha: Ratio,
    beta: Ratio,
    challenger: ActorId,
    committee: &[(ActorId, u64)],
) -> SlashDistribution {
    let amount = s_slash.min(available);
    let challenger_reward = alpha.mul_floor(amount);
    let pool = beta.mul_floor(amount) as u128;
    let committee_stake: u128 = committee.iter().map(|&(_, s)| s as u128).sum();
    let committee_rewards = committee
        .iter()
        .map(|&(id, s)| (id, if committee_stake == 0 { 0 } else { (pool * s as u128 / committee_stake) as u64 }))
        .collect();
    let mut d = SlashDistribution {
        requested: s_slash,
        amount,
        capped: amount < s_slash,
        challenger,
        challenger_reward,
        committee_rewards,
        burned: 0,
    };
    d.burned = amount - d.paid_out();
    assert_eq!(d.paid_out() + d.burned, d.amount, "slash conservation");
    d
}
