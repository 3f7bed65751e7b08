use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratio::Ratio;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid parameter {field}: {reason}")]
pub struct ParamError {
    pub field: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    /// Challenge window in epochs.
    pub delta: u64,
    /// Fraction of committee votes needed to uphold a result.
    pub tau: Ratio,
    pub committee_size: usize,
    pub light_audit_size: usize,
    /// Challenger share of a slash.
    pub alpha: Ratio,
    /// Committee share of a slash.
    pub beta: Ratio,
    /// Stake units removed from an operator that loses a challenge.
    pub s_slash: u64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            delta: 2,
            tau: Ratio::new(2, 3).expect("2/3"),
            committee_size: 3,
            light_audit_size: 2,
            alpha: Ratio::new(1, 5).expect("1/5"),
            beta: Ratio::new(3, 10).expect("3/10"),
            s_slash: 100,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let err = |field, reason: &str| Err(ParamError { field, reason: reason.into() });
        if self.tau == Ratio::ZERO || self.tau > Ratio::ONE {
            return err("tau", "must lie in (0, 1]");
        }
        match self.alpha.checked_add(&self.beta) {
            Some(sum) if sum <= Ratio::ONE => {}
            _ => return err("alpha", "alpha + beta must not exceed 1"),
        }
        if self.committee_size == 0 {
            return err("committee_size", "must be positive");
        }
        if self.light_audit_size == 0 {
            return err("light_audit_size", "must be positive");
        }
        Ok(())
    }
}
