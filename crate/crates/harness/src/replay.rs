//! Log replay: re-run the scenario, compare byte for byte, and re-check every
//! receipt signature and DA inclusion the log references.

use std::collections::BTreeMap;

use optiverify::da::{audit_path, root_from_path, root_of_hashes};
use optiverify::protocol::{ActorId, Event};
use optiverify::receipts::{verify_receipt, Receipt};
use optiverify::registry::ApprovedRegistry;
use optiverify::signing::PublicKey;
use optiverify::Hash32;
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::run::{run_scenario, RunError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("line {line}: log diverges from re-run\n  log:    {found}\n  re-run: {expected}")]
    Divergence { line: usize, expected: String, found: String },
    #[error("line {line}: {reason}")]
    BadEntry { line: usize, reason: String },
    #[error("line {line}: receipt signature does not verify")]
    BadSignature { line: usize },
    #[error("line {line}: leaf is not included under the sealed root of slot {slot}")]
    BadInclusion { line: usize, slot: u64 },
}

impl ReplayError {
    /// 1-based line of the first problem, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            ReplayError::Run(_) => None,
            ReplayError::Divergence { line, .. }
            | ReplayError::BadEntry { line, .. }
            | ReplayError::BadSignature { line }
            | ReplayError::BadInclusion { line, .. } => Some(*line),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplaySummary {
    pub lines: usize,
    pub receipts_checked: usize,
    pub inclusions_checked: usize,
}

/// Returns the summary when the log replays exactly and every referenced
/// signature and inclusion checks out.
pub fn replay_verify(log: &str, config: &ScenarioConfig) -> Result<ReplaySummary, ReplayError> {
    let rerun = run_scenario(config)?;
    let expected = rerun.log();
    let mut ours = expected.lines();
    let mut n = 0;
    for (i, found) in log.lines().enumerate() {
        n = i + 1;
        match ours.next() {
            Some(e) if e == found => {}
            other => {
                return Err(ReplayError::Divergence { line: n, expected: other.unwrap_or("<end of log>").into(), found: found.into() })
            }
        }
    }
    if let Some(extra) = ours.next() {
        return Err(ReplayError::Divergence { line: n + 1, expected: extra.into(), found: "<end of log>".into() });
    }
    let (receipts_checked, inclusions_checked) = check_references(log, rerun.protocol.registry())?;
    Ok(ReplaySummary { lines: n, receipts_checked, inclusions_checked })
}

fn check_references(log: &str, registry: &ApprovedRegistry) -> Result<(usize, usize), ReplayError> {
    let mut keys: BTreeMap<ActorId, PublicKey> = BTreeMap::new();
    let mut slots: BTreeMap<u64, Vec<(usize, u32, Hash32)>> = BTreeMap::new();
    let mut receipts = 0;
    let mut inclusions = 0;
    for (i, text) in log.lines().enumerate() {
        let line = i + 1;
        let event: Event = serde_json::from_str(text).map_err(|e| ReplayError::BadEntry { line, reason: e.to_string() })?;
        match event {
            Event::Register { actor, key: Some(key), .. } => {
                keys.insert(actor, key);
            }
            Event::Publish { operator, pointer, leaf_hash, receipt, .. } => {
                let receipt = Receipt::try_from(receipt).map_err(|e| ReplayError::BadEntry { line, reason: e.to_string() })?;
                let key = keys.get(&operator).ok_or(ReplayError::BadEntry { line, reason: format!("unregistered operator {operator}") })?;
                if !verify_receipt(&receipt, key, registry) {
                    return Err(ReplayError::BadSignature { line });
                }
                receipts += 1;
                slots.entry(pointer.slot_id).or_default().push((line, pointer.leaf_index, leaf_hash));
            }
            Event::Seal { slot, root, .. } => {
                let leaves = slots.remove(&slot).unwrap_or_default();
                let hashes: Vec<Hash32> = leaves.iter().map(|l| l.2).collect();
                for (pos, (publish_line, index, leaf)) in leaves.iter().enumerate() {
                    let valid = *index as usize == pos && root_from_path(*leaf, &audit_path(&hashes, pos)) == root;
                    if !valid {
                        return Err(ReplayError::BadInclusion { line: *publish_line, slot });
                    }
                    inclusions += 1;
                }
                if hashes.is_empty() || root_of_hashes(&hashes) != root {
                    return Err(ReplayError::BadInclusion { line, slot });
                }
            }
            _ => {}
        }
    }
    if let Some((slot, leaves)) = slots.into_iter().next() {
        return Err(ReplayError::BadInclusion { line: leaves[0].0, slot });
    }
    Ok((receipts, inclusions))
}
