//! Newline-delimited JSON event log.

use serde::{Deserialize, Serialize};

use super::actors::ActorId;
use super::committee::Vote;
use super::slash::SlashDistribution;
use crate::da::DaPointer;
use crate::hash::Hash32;
use crate::privacy::Denial;
use crate::receipts::ReceiptJson;
use crate::signing::PublicKey;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Register { epoch: u64, actor: ActorId, role: super::ActorRole, stake: u64, behavior: super::Behavior, key: Option<PublicKey> },
    Submit { epoch: u64, submission: u64, operator: ActorId, client: ActorId, req_hash: Hash32 },
    Publish { epoch: u64, submission: u64, operator: ActorId, pointer: DaPointer, leaf_hash: Hash32, receipt: ReceiptJson },
    Seal { epoch: u64, slot: u64, root: Hash32 },
    ClientCheck { epoch: u64, submission: u64, client: ActorId, ok: bool },
    Audit { epoch: u64, submission: u64, auditor: ActorId, result: String },
    Challenge { epoch: u64, submission: u64, challenger: ActorId, committee: Vec<ActorId> },
    Vote { epoch: u64, submission: u64, verifier: ActorId, vote: Vote, reason: String, output_hash: Option<Hash32> },
    Verdict { epoch: u64, submission: u64, yes: u64, total: u64, upheld: bool, majority_output_hash: Hash32 },
    Slash { epoch: u64, submission: u64, operator: ActorId, distribution: SlashDistribution },
    Finalize { epoch: u64, submission: u64, reason: String },
    ShareDenied { epoch: u64, requester: ActorId, shard: u8, denial: Denial },
    ShareRequest { epoch: u64, requester: ActorId, kind: String, released: u64 },
    Rotate { epoch: u64, key_epoch: u32, public_key: PublicKey },
    Prune { epoch: u64, slots: Vec<u64> },
    Warning { epoch: u64, message: String },
    BackstopAlert { epoch: u64, submission: u64, honest_rejections: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    lines: Vec<String>,
    enabled: bool,
}

impl EventLog {
    pub fn new(enabled: bool) -> Self {
        Self { lines: Vec::new(), enabled }
    }

    pub fn push(&mut self, event: Event) {
        if self.enabled {
            self.lines.push(serde_json::to_string(&event).expect("event json"));
        }
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn to_ndjson(&self) -> String {
        self.lines.iter().flat_map(|l| [l.as_str(), "\n"]).collect()
    }

    pub fn parse(text: &str) -> Result<Vec<Event>, serde_json::Error> {
        text.lines().filter(|l| !l.is_empty()).map(serde_json::from_str).collect()
    }
}
