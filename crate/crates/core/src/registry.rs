//! Local stand-in for the on-chain registry of approved execution environments
//! and the public key-epoch table.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use detcore::ExecutionTuple;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{hash_commit, hash_parts, Hash32};
use crate::signing::PublicKey;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry io: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochStatus {
    Active,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub public_key: PublicKey,
    pub status: EpochStatus,
}

/// Which environment field failed the approval check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvField {
    Model,
    Container,
    Arch,
    Driver,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovedRegistry {
    pub chain_id: String,
    pub models: BTreeSet<String>,
    pub containers: BTreeSet<Hash32>,
    pub archs: BTreeSet<String>,
    pub drivers: BTreeSet<String>,
    pub code_version: String,
    #[serde(default)]
    pub key_epochs: BTreeMap<u32, EpochRecord>,
}

pub const DEFAULT_CONTAINER_LABEL: &str = "toy-container:v1";

impl Default for ApprovedRegistry {
    fn default() -> Self {
        Self {
            chain_id: "optiverify-devnet".into(),
            models: ["toy-7".to_string()].into(),
            containers: [default_container()].into(),
            archs: ["archA", "archB", "archC"].map(String::from).into(),
            drivers: ["drv-550.54".to_string()].into(),
            code_version: "verifier-1.0".into(),
            key_epochs: BTreeMap::new(),
        }
    }
}

pub fn default_container() -> Hash32 {
    hash_commit(DEFAULT_CONTAINER_LABEL.as_bytes())
}

/// Enclave measurement of a container running a given verifier code version.
pub fn measurement_of(container: &Hash32, code_version: &str) -> Hash32 {
    hash_parts(&[container.as_bytes(), code_version.as_bytes()])
}

impl ApprovedRegistry {
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn approved_measurements(&self) -> BTreeSet<Hash32> {
        self.containers.iter().map(|c| measurement_of(c, &self.code_version)).collect()
    }

    pub fn check_environment(
        &self,
        model_id: &str,
        container: &Hash32,
        arch: &str,
        driver: &str,
    ) -> Result<(), EnvField> {
        if !self.models.contains(model_id) {
            return Err(EnvField::Model);
        }
        if !self.containers.contains(container) {
            return Err(EnvField::Container);
        }
        if !self.archs.contains(arch) {
            return Err(EnvField::Arch);
        }
        if !self.drivers.contains(driver) {
            return Err(EnvField::Driver);
        }
        Ok(())
    }

    pub fn check_exec(&self, exec: &ExecutionTuple) -> Result<(), EnvField> {
        let container = Hash32(*exec.container_digest());
        self.check_environment(exec.model_id(), &container, exec.arch(), exec.driver_tag())
    }

    pub fn epoch_status(&self, epoch: u32) -> Option<EpochStatus> {
        self.key_epochs.get(&epoch).map(|r| r.status)
    }
}
