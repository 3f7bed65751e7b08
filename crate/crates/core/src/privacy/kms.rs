//! Threshold key management: n shards each hold one Shamir share of the
//! application secret key per epoch and release it only to attested enclaves.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::attestation::{AttestationQuote, NonceCache, QuotePolicy, QuoteRejection};
use super::envelope::{generate_secret, public_key_for_secret};
use super::shamir::{split_secret, KeyShare, ShamirError};
use crate::encoding::Canonical;
use crate::hash::Hash32;
use crate::registry::{EpochRecord, EpochStatus};
use crate::signing::{EcdsaSigner, PublicKey, Signature, Signer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Error)]
#[serde(rename_all = "snake_case")]
pub enum Denial {
    #[error("quote is stale or future-dated")]
    Freshness,
    #[error("key epoch is retired or unknown")]
    Epoch,
    #[error("enclave identity not accepted")]
    Identity,
    #[error("quote nonce already used")]
    Replay,
}

impl From<QuoteRejection> for Denial {
    fn from(r: QuoteRejection) -> Self {
        match r {
            QuoteRejection::BadSignature | QuoteRejection::Unapproved => Denial::Identity,
            QuoteRejection::Stale { .. } | QuoteRejection::FromFuture => Denial::Freshness,
            QuoteRejection::Replayed => Denial::Replay,
        }
    }
}

#[derive(Debug, Error)]
pub enum KmsError {
    #[error("rotation lacks governance approval")]
    Unapproved,
    #[error(transparent)]
    Shamir(#[from] ShamirError),
    #[error("policy io: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GovernanceApproval {
    pub approved: bool,
}

impl GovernanceApproval {
    pub fn granted() -> Self {
        Self { approved: true }
    }

    pub fn denied() -> Self {
        Self { approved: false }
    }
}

/// A share handed over inside the mutually authenticated session, signed by
/// the shard's identity key and bound to the requesting quote's nonce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareDelivery {
    pub share: KeyShare,
    pub quote_nonce: [u8; 16],
    pub shard_sig: Signature,
}

pub(crate) fn delivery_payload(share: &KeyShare, nonce: &[u8; 16]) -> Vec<u8> {
    [share.canonical_encode().as_slice(), nonce].concat()
}

#[derive(Debug)]
pub struct KmsShard {
    shard_id: u8,
    identity: EcdsaSigner,
    shares: BTreeMap<u32, KeyShare>,
    nonces: NonceCache,
}

impl KmsShard {
    pub fn shard_id(&self) -> u8 {
        self.shard_id
    }

    pub fn identity(&self) -> PublicKey {
        self.identity.public_key()
    }

    pub fn holds_epoch(&self, epoch: u32) -> bool {
        self.shares.contains_key(&epoch)
    }

    fn release(&mut self, quote: &AttestationQuote, epoch: u32, active: bool, policy: &QuotePolicy, now: u64) -> Result<ShareDelivery, Denial> {
        policy.check(quote, now)?;
        if !active {
            return Err(Denial::Epoch);
        }
        let share = self.shares.get(&epoch).ok_or(Denial::Epoch)?.clone();
        if self.nonces.contains(&quote.nonce) {
            return Err(Denial::Replay);
        }
        super::attestation::verify_quote(quote, policy, now, &mut self.nonces)?;
        let shard_sig = self.identity.sign(&delivery_payload(&share, &quote.nonce)).expect("shard signs");
        Ok(ShareDelivery { share, quote_nonce: quote.nonce, shard_sig })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KmsStats {
    pub released: u64,
    pub denied: BTreeMap<Denial, u64>,
}

/// On-disk shard policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPolicyFile {
    pub approved_measurements: BTreeSet<Hash32>,
    pub threshold: usize,
    pub shards: usize,
    pub freshness_window: u64,
    pub attestation_root: PublicKey,
    pub epochs: BTreeMap<u32, EpochRecord>,
}

#[derive(Debug)]
pub struct Kms {
    policy: QuotePolicy,
    threshold: usize,
    shards: Vec<KmsShard>,
    epochs: BTreeMap<u32, EpochRecord>,
    rng: ChaCha20Rng,
    stats: KmsStats,
}

impl Kms {
    /// Creates `n` shards and the first key epoch.
    pub fn new(policy: QuotePolicy, threshold: usize, n: usize, seed: u64) -> Result<Self, KmsError> {
        if threshold == 0 || threshold > n || n > 255 {
            return Err(ShamirError::BadParameters { t: threshold, n }.into());
        }
        let shards = (1..=n as u8)
            .map(|id| KmsShard {
                shard_id: id,
                identity: EcdsaSigner::from_seed(&[b"kms-shard:".as_slice(), &seed.to_be_bytes(), &[id]].concat()),
                shares: BTreeMap::new(),
                nonces: NonceCache::default(),
            })
            .collect();
        let mut kms = Self {
            policy,
            threshold,
            shards,
            epochs: BTreeMap::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            stats: KmsStats::default(),
        };
        kms.install_epoch(1)?;
        Ok(kms)
    }

    fn install_epoch(&mut self, epoch: u32) -> Result<PublicKey, KmsError> {
        let secret = generate_secret(&mut self.rng);
        let public_key = public_key_for_secret(&secret).expect("generated key is valid");
        let shares = split_secret(secret.as_ref(), self.threshold, self.shards.len(), epoch, &mut self.rng)?;
        for (shard, share) in self.shards.iter_mut().zip(shares) {
            shard.shares.insert(epoch, share);
        }
        self.epochs.insert(epoch, EpochRecord { public_key, status: EpochStatus::Active });
        Ok(public_key)
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn shard_count(&self) -> usize {
        self.shards.len()
    }

    pub fn policy(&self) -> &QuotePolicy {
        &self.policy
    }

    pub fn stats(&self) -> &KmsStats {
        &self.stats
    }

    pub fn shard_identities(&self) -> BTreeMap<u8, PublicKey> {
        self.shards.iter().map(|s| (s.shard_id, s.identity())).collect()
    }

    pub fn epoch_table(&self) -> &BTreeMap<u32, EpochRecord> {
        &self.epochs
    }

    pub fn active_epoch(&self) -> (u32, PublicKey) {
        let (&e, r) = self
            .epochs
            .iter()
            .find(|(_, r)| r.status == EpochStatus::Active)
            .expect("exactly one active epoch");
        (e, r.public_key)
    }

    /// Asks one shard (by position) for its share of `epoch`.
    pub fn release_share(&mut self, shard_index: usize, quote: &AttestationQuote, epoch: u32, now: u64) -> Result<ShareDelivery, Denial> {
        let active = self.epochs.get(&epoch).is_some_and(|r| r.status == EpochStatus::Active);
        let shard = self.shards.get_mut(shard_index).ok_or(Denial::Identity)?;
        let result = shard.release(quote, epoch, active, &self.policy, now);
        match &result {
            Ok(_) => self.stats.released += 1,
            Err(d) => *self.stats.denied.entry(*d).or_default() += 1,
        }
        result
    }

    /// Retires the active epoch, destroys its shares and installs a fresh key.
    pub fn rotate_epoch(&mut self, approval: GovernanceApproval) -> Result<(u32, PublicKey), KmsError> {
        if !approval.approved {
            return Err(KmsError::Unapproved);
        }
        let (old, _) = self.active_epoch();
        self.epochs.get_mut(&old).expect("active epoch exists").status = EpochStatus::Retired;
        for shard in &mut self.shards {
            shard.shares.remove(&old);
        }
        let next = old + 1;
        let pk = self.install_epoch(next)?;
        Ok((next, pk))
    }

    pub fn policy_file(&self) -> ShardPolicyFile {
        ShardPolicyFile {
            approved_measurements: self.policy.approved.clone(),
            threshold: self.threshold,
            shards: self.shards.len(),
            freshness_window: self.policy.freshness_window,
            attestation_root: self.policy.root,
            epochs: self.epochs.clone(),
        }
    }

    pub fn save_policy(&self, path: &Path) -> Result<(), KmsError> {
        std::fs::write(path, serde_json::to_string_pretty(&self.policy_file())?)?;
        Ok(())
    }

    pub fn load_policy(path: &Path) -> Result<ShardPolicyFile, KmsError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
