//! Plaintext visibility tracking by role.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Client,
    Operator,
    DaStore,
    KmsShard,
    EnclaveContext,
    Verifier,
    Watcher,
    Auditor,
}

impl Role {
    /// Roles allowed to hold plaintext.
    pub fn may_hold_plaintext(self) -> bool {
        matches!(self, Role::Client | Role::EnclaveContext)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Plaintext,
    Ciphertext,
    Commitment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaintedBytes {
    pub bytes: Vec<u8>,
    pub label: Label,
}

#[derive(Debug, Clone, Default)]
pub struct TaintLedger {
    observed: BTreeMap<(Role, Label), u64>,
}

impl TaintLedger {
    pub fn observe(&mut self, role: Role, label: Label) {
        *self.observed.entry((role, label)).or_default() += 1;
    }

    pub fn observe_bytes(&mut self, role: Role, value: &TaintedBytes) {
        self.observe(role, value.label);
    }

    pub fn plaintext_holders(&self) -> BTreeSet<Role> {
        self.observed.keys().filter(|(_, l)| *l == Label::Plaintext).map(|(r, _)| *r).collect()
    }

    /// Plaintext observations by roles not allowed to hold plaintext.
    pub fn exposures(&self) -> u64 {
        self.observed
            .iter()
            .filter(|((r, l), _)| *l == Label::Plaintext && !r.may_hold_plaintext())
            .map(|(_, n)| n)
            .sum()
    }

    pub fn count(&self, role: Role, label: Label) -> u64 {
        self.observed.get(&(role, label)).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &TaintLedger) {
        for (k, n) in &other.observed {
            *self.observed.entry(*k).or_default() += n;
        }
    }
}
