//! Files written by `run` and read back by `verify-receipt`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use optiverify::da::{BatchDump, DaStore};
use optiverify::protocol::{ActorId, ActorRole};
use optiverify::receipts::{reproduce_and_verify, verify_receipt, KeyAccess, Receipt, ReceiptJson, ReexecReport, ResponseMetadata, Verdict};
use optiverify::registry::ApprovedRegistry;
use optiverify::signing::PublicKey;
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::run::{run_scenario, RunError, ScenarioRun};

pub const EVENTS_FILE: &str = "events.ndjson";
pub const METRICS_FILE: &str = "metrics.json";
pub const STAKES_FILE: &str = "stakes.csv";
pub const DA_FILE: &str = "da_dump.json";
pub const REGISTRY_FILE: &str = "registry.json";
pub const KEYS_FILE: &str = "operator_keys.json";
pub const RECEIPTS_DIR: &str = "receipts";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("no operator key verifies this receipt")]
    NoMatchingKey,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, reason: impl ToString) -> ArtifactError {
    ArtifactError::Format { path: path.to_path_buf(), reason: reason.to_string() }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ArtifactError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn read(path: &Path) -> Result<String, ArtifactError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("artifact json") + "\n"
}

/// Writes the event log, metrics, stakes, DA dump, registry, operator keys and receipts.
pub fn write_artifacts(run: &ScenarioRun, dir: &Path) -> Result<(), ArtifactError> {
    let receipts_dir = dir.join(RECEIPTS_DIR);
    fs::create_dir_all(&receipts_dir).map_err(io_err(&receipts_dir))?;
    write(&dir.join(EVENTS_FILE), run.log())?;
    write(&dir.join(METRICS_FILE), json(&run.metrics))?;

    let stakes_path = dir.join(STAKES_FILE);
    let mut csv = csv::Writer::from_writer(Vec::new());
    for s in &run.metrics.final_stakes {
        csv.serialize(s).map_err(|e| format_err(&stakes_path, e))?;
    }
    write(&stakes_path, csv.into_inner().map_err(|e| format_err(&stakes_path, e))?)?;

    write(&dir.join(DA_FILE), json(&run.da_snapshot))?;
    write(&dir.join(REGISTRY_FILE), json(run.protocol.registry()))?;
    let keys: BTreeMap<ActorId, PublicKey> = run
        .protocol
        .actors()
        .filter(|a| a.role == ActorRole::Operator)
        .filter_map(|a| run.protocol.operator_key(a.id).ok().map(|k| (a.id, k)))
        .collect();
    write(&dir.join(KEYS_FILE), json(&keys))?;
    for s in run.protocol.submissions() {
        write(&receipts_dir.join(format!("submission-{:05}.json", s.id)), json(&ReceiptJson::from(&s.receipt)))?;
    }
    Ok(())
}

pub fn load_receipt(path: &Path) -> Result<Receipt, ArtifactError> {
    Receipt::from_json(&read(path)?).map_err(|e| format_err(path, e))
}

pub fn load_da(path: &Path) -> Result<DaStore, ArtifactError> {
    let dumps: Vec<BatchDump> = serde_json::from_str(&read(path)?).map_err(|e| format_err(path, e))?;
    DaStore::restore(&dumps).map_err(|e| format_err(path, e))
}

pub fn load_registry(path: &Path) -> Result<ApprovedRegistry, ArtifactError> {
    serde_json::from_str(&read(path)?).map_err(|e| format_err(path, e))
}

pub fn load_keys(path: &Path) -> Result<Vec<PublicKey>, ArtifactError> {
    let keys: BTreeMap<ActorId, PublicKey> = serde_json::from_str(&read(path)?).map_err(|e| format_err(path, e))?;
    Ok(keys.into_values().collect())
}

/// Key access for an auditor with no route to the key shards.
struct NoKeyAccess;

impl KeyAccess for NoKeyAccess {
    fn reexecute(&mut self, _: u32, _: &[u8]) -> Result<ReexecReport, String> {
        Err("no key access; pass the scenario config to re-execute".into())
    }
}

pub struct ReceiptCheck {
    pub verdict: Verdict,
    /// False when no scenario was given, so decryption could not be attempted.
    pub reexecuted: bool,
}

/// The auditor path for one receipt against a DA dump. With the scenario
/// config the run is rebuilt so an attested enclave can obtain the key.
pub fn check_receipt_file(
    receipt: Receipt,
    da: &DaStore,
    registry: &ApprovedRegistry,
    candidate_keys: &[PublicKey],
    scenario: Option<&ScenarioConfig>,
) -> Result<ReceiptCheck, ArtifactError> {
    let operator = *candidate_keys.iter().find(|k| verify_receipt(&receipt, k, registry)).ok_or(ArtifactError::NoMatchingKey)?;
    let meta = ResponseMetadata::new(receipt);
    match scenario {
        Some(config) => {
            let mut run = run_scenario(config)?;
            let registry = run.protocol.registry().clone();
            let mut access = run.protocol.auditor_access(b"auditor-cli");
            Ok(ReceiptCheck { verdict: reproduce_and_verify(da, &meta, &operator, &registry, &mut access), reexecuted: true })
        }
        None => Ok(ReceiptCheck {
            verdict: reproduce_and_verify(da, &meta, &operator, registry, &mut NoKeyAccess),
            reexecuted: false,
        }),
    }
}
