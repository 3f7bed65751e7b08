use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorId(pub u32);

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorRole {
    Client,
    Operator,
    Verifier,
    Watcher,
}

/// Honest behaviour or a fixed adversary strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    /// Operator alters the output before hashing and signing it.
    FalsifyOutput,
    /// Operator runs a patched container while claiming the approved digest.
    SubstituteContainer,
    /// Operator answers new requests with its previously published record.
    ReplayStaleReceipt,
    /// Operator commits its record to the DA root but withholds the data.
    WithholdDa,
    /// Verifier upholds every result regardless of re-execution.
    Colluding,
    /// Verifier never responds.
    Offline,
}

impl Behavior {
    pub fn allowed_for(self, role: ActorRole) -> bool {
        use Behavior::*;
        match self {
            Honest => true,
            FalsifyOutput | SubstituteContainer | ReplayStaleReceipt | WithholdDa => role == ActorRole::Operator,
            Colluding => role == ActorRole::Verifier,
            Offline => matches!(role, ActorRole::Verifier | ActorRole::Watcher),
        }
    }

    pub fn is_cheating_operator(self) -> bool {
        use Behavior::*;
        matches!(self, FalsifyOutput | SubstituteContainer | ReplayStaleReceipt | WithholdDa)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub id: ActorId,
    pub role: ActorRole,
    pub stake: u64,
    pub behavior: Behavior,
}
