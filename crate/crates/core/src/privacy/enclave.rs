//! Mock enclave holding the reconstructed application key for one session.

use std::collections::BTreeMap;

use thiserror::Error;
use zeroize::{Zeroize, Zeroizing};

use super::attestation::{AttestationQuote, AttestationRoot};
use super::envelope::{self, public_key_for_secret, EnvelopeError, Plaintext};
use super::kms::{delivery_payload, Denial, Kms, ShareDelivery};
use super::shamir::{reconstruct, ShamirError};
use crate::hash::Hash32;
use crate::receipts::ReexecReport;
use crate::signing::{verify_signature, PublicKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrivacyError {
    #[error("plaintext access outside an enclave session holding the key")]
    TaintViolation,
    #[error("no attested session is open")]
    NoSession,
    #[error("share from shard {0} failed authentication")]
    BadDelivery(u8),
    #[error("shares denied: {0:?}")]
    SharesDenied(Vec<(u8, Denial)>),
    #[error(transparent)]
    Shamir(#[from] ShamirError),
    #[error("reconstructed key does not match epoch {0}")]
    KeyMismatch(u32),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error("ciphertext is for epoch {found}, session key is for {expected}")]
    WrongEpoch { expected: u32, found: u32 },
    #[error("re-execution failed: {0}")]
    Reexec(String),
}

#[derive(Debug)]
pub struct EnclaveContext {
    measurement: Hash32,
    session: Option<[u8; 16]>,
    key: [u8; 32],
    key_epoch: Option<u32>,
}

impl EnclaveContext {
    pub fn new(measurement: Hash32) -> Self {
        Self { measurement, session: None, key: [0; 32], key_epoch: None }
    }

    pub fn measurement(&self) -> Hash32 {
        self.measurement
    }

    /// Opens a session and obtains a quote bound to `nonce`.
    pub fn attest(&mut self, root: &AttestationRoot, nonce: [u8; 16], now: u64) -> AttestationQuote {
        self.session = Some(nonce);
        root.attest(self.measurement, nonce, now)
    }

    /// Verifies each delivery against the shard identities and this session's
    /// nonce, interpolates the key and checks it against the epoch public key.
    pub fn reconstruct(
        &mut self,
        deliveries: &[ShareDelivery],
        shard_identities: &BTreeMap<u8, PublicKey>,
        epoch: u32,
        epoch_public_key: &PublicKey,
    ) -> Result<(), PrivacyError> {
        let nonce = self.session.ok_or(PrivacyError::NoSession)?;
        for d in deliveries {
            let id = d.share.shard_id;
            let authentic = shard_identities
                .get(&id)
                .is_some_and(|pk| verify_signature(pk, &delivery_payload(&d.share, &d.quote_nonce), &d.shard_sig));
            if !authentic || d.quote_nonce != nonce {
                return Err(PrivacyError::BadDelivery(id));
            }
        }
        let shares: Vec<_> = deliveries.iter().map(|d| d.share.clone()).collect();
        if shares.iter().any(|s| s.epoch != epoch) {
            return Err(ShamirError::Mismatched.into());
        }
        let secret = Zeroizing::new(reconstruct(&shares)?);
        let key: [u8; 32] = secret.as_slice().try_into().map_err(|_| PrivacyError::KeyMismatch(epoch))?;
        let key = Zeroizing::new(key);
        if public_key_for_secret(&key).ok().as_ref() != Some(epoch_public_key) {
            return Err(PrivacyError::KeyMismatch(epoch));
        }
        self.key.copy_from_slice(key.as_ref());
        self.key_epoch = Some(epoch);
        Ok(())
    }

    pub fn holds_key(&self) -> bool {
        self.key_epoch.is_some()
    }

    /// True when the key buffer contains only zeros.
    pub fn key_buffer_clear(&self) -> bool {
        self.key.iter().all(|&b| b == 0)
    }

    pub fn decrypt_payload(&self, ciphertext: &[u8]) -> Result<Plaintext, PrivacyError> {
        let epoch = self.key_epoch.ok_or(PrivacyError::TaintViolation)?;
        let found = envelope::envelope_epoch(ciphertext)?;
        if found != epoch {
            return Err(PrivacyError::WrongEpoch { expected: epoch, found });
        }
        Ok(envelope::open(&self.key, ciphertext)?)
    }

    /// Decrypts and re-executes without letting plaintext leave the enclave.
    pub fn reexecute(&self, ciphertext: &[u8]) -> Result<ReexecReport, PrivacyError> {
        let (request, output) = self.decrypt_payload(ciphertext)?;
        ReexecReport::from_plaintext(&request, &output).map_err(PrivacyError::Reexec)
    }

    /// Ends the session and overwrites the key buffer.
    pub fn zeroize(&mut self) {
        self.key.zeroize();
        self.key_epoch = None;
        self.session = None;
    }
}

impl Drop for EnclaveContext {
    fn drop(&mut self) {
        self.zeroize();
    }
}

/// Requests shares shard by shard until the threshold is met, then reconstructs.
pub fn provision(kms: &mut Kms, ctx: &mut EnclaveContext, quote: &AttestationQuote, epoch: u32, now: u64) -> Result<(), PrivacyError> {
    let mut deliveries = Vec::new();
    let mut denials = Vec::new();
    for i in 0..kms.shard_count() {
        if deliveries.len() == kms.threshold() {
            break;
        }
        match kms.release_share(i, quote, epoch, now) {
            Ok(d) => deliveries.push(d),
            Err(d) => denials.push((i as u8 + 1, d)),
        }
    }
    if deliveries.len() < kms.threshold() {
        return Err(PrivacyError::SharesDenied(denials));
    }
    let pk = kms.epoch_table().get(&epoch).map(|r| r.public_key).ok_or(PrivacyError::SharesDenied(denials))?;
    ctx.reconstruct(&deliveries, &kms.shard_identities(), epoch, &pk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::hash_commit;
    use crate::privacy::attestation::QuotePolicy;
    use crate::privacy::kms::GovernanceApproval;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup(t: usize, n: usize) -> (Kms, AttestationRoot, Hash32) {
        let root = AttestationRoot::from_seed(b"enclave-test");
        let m = hash_commit(b"enclave");
        let policy = QuotePolicy { root: root.public_key(), approved: [m].into(), freshness_window: 2 };
        (Kms::new(policy, t, n, 11).unwrap(), root, m)
    }

    #[test]
    fn session_decrypts_and_zeroizes() {
        let (mut kms, root, m) = setup(2, 3);
        let (epoch, pk) = kms.active_epoch();
        let ct = envelope::seal(&pk, epoch, b"req", b"out", &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let mut ctx = EnclaveContext::new(m);
        assert_eq!(ctx.decrypt_payload(&ct).unwrap_err(), PrivacyError::TaintViolation);
        let q = ctx.attest(&root, [1; 16], 0);
        provision(&mut kms, &mut ctx, &q, epoch, 0).unwrap();
        assert!(ctx.holds_key() && !ctx.key_buffer_clear());
        let (r, o) = ctx.decrypt_payload(&ct).unwrap();
        assert_eq!((r.as_slice(), o.as_slice()), (&b"req"[..], &b"out"[..]));
        ctx.zeroize();
        assert!(!ctx.holds_key() && ctx.key_buffer_clear());
        assert_eq!(ctx.decrypt_payload(&ct).unwrap_err(), PrivacyError::TaintViolation);
    }

    #[test]
    fn below_threshold_fails() {
        let (mut kms, root, m) = setup(3, 3);
        let (epoch, pk) = kms.active_epoch();
        let mut ctx = EnclaveContext::new(m);
        let q = ctx.attest(&root, [2; 16], 0);
        let d: Vec<_> = (0..2).map(|i| kms.release_share(i, &q, epoch, 0).unwrap()).collect();
        assert!(matches!(
            ctx.reconstruct(&d, &kms.shard_identities(), epoch, &pk),
            Err(PrivacyError::Shamir(ShamirError::InsufficientShares { got: 2, need: 3 }))
        ));
        assert!(!ctx.holds_key());
    }

    #[test]
    fn mixed_epochs_fail() {
        let (mut kms, root, m) = setup(2, 3);
        let (e1, _) = kms.active_epoch();
        let mut ctx = EnclaveContext::new(m);
        let q1 = ctx.attest(&root, [3; 16], 0);
        let old = kms.release_share(0, &q1, e1, 0).unwrap();
        kms.rotate_epoch(GovernanceApproval::granted()).unwrap();
        let (e2, pk2) = kms.active_epoch();
        let mut ctx2 = EnclaveContext::new(m);
        let q2 = ctx2.attest(&root, [3; 16], 0);
        let new = kms.release_share(1, &q2, e2, 0).unwrap();
        assert_eq!(
            ctx2.reconstruct(&[old, new], &kms.shard_identities(), e2, &pk2),
            Err(PrivacyError::Shamir(ShamirError::Mismatched))
        );
        assert!(!ctx2.holds_key());
    }

    #[test]
    fn forged_delivery_rejected() {
        let (mut kms, root, m) = setup(2, 3);
        let (epoch, pk) = kms.active_epoch();
        let mut ctx = EnclaveContext::new(m);
        let q = ctx.attest(&root, [4; 16], 0);
        let mut d: Vec<_> = (0..2).map(|i| kms.release_share(i, &q, epoch, 0).unwrap()).collect();
        d[1].share.y[0] ^= 1;
        assert_eq!(ctx.reconstruct(&d, &kms.shard_identities(), epoch, &pk), Err(PrivacyError::BadDelivery(2)));
    }

    #[test]
    fn unattested_enclave_gets_nothing() {
        let (mut kms, root, _) = setup(2, 3);
        let (epoch, _) = kms.active_epoch();
        let mut rogue = EnclaveContext::new(hash_commit(b"rogue"));
        let q = rogue.attest(&root, [5; 16], 0);
        let err = provision(&mut kms, &mut rogue, &q, epoch, 0).unwrap_err();
        assert_eq!(err, PrivacyError::SharesDenied(vec![(1, Denial::Identity), (2, Denial::Identity), (3, Denial::Identity)]));
        assert_eq!(kms.stats().released, 0);
    }
}
