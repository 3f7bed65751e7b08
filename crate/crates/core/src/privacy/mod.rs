//! Threshold key management, mock attestation, enclave sessions, payload
//! encryption and plaintext visibility tracking.

pub mod attestation;
pub mod enclave;
pub mod envelope;
pub mod gf256;
pub mod kms;
pub mod shamir;
pub mod taint;

pub use attestation::{verify_quote, AttestationQuote, AttestationRoot, NonceCache, QuotePolicy, QuoteRejection};
pub use enclave::{provision, EnclaveContext, PrivacyError};
pub use envelope::{envelope_epoch, seal as encrypt_payload, EnvelopeError};
pub use kms::{Denial, GovernanceApproval, Kms, KmsError, ShareDelivery};
pub use shamir::{reconstruct, split_secret, KeyShare, ShamirError};
pub use taint::{Label, Role, TaintLedger, TaintedBytes};

use crate::hash::{hash_parts, Hash32};
use crate::receipts::{KeyAccess, ReexecReport};

/// Auditor-side key access: every call attests a fresh enclave, provisions
/// the key from the shards, re-executes and zeroizes.
pub struct EnclaveKeyAccess<'a> {
    pub kms: &'a mut Kms,
    pub root: &'a AttestationRoot,
    pub measurement: Hash32,
    pub now: u64,
    pub nonce_label: Vec<u8>,
    pub taint: &'a mut TaintLedger,
    sessions: u64,
}

impl<'a> EnclaveKeyAccess<'a> {
    pub fn new(
        kms: &'a mut Kms,
        root: &'a AttestationRoot,
        measurement: Hash32,
        now: u64,
        nonce_label: &[u8],
        taint: &'a mut TaintLedger,
    ) -> Self {
        Self { kms, root, measurement, now, nonce_label: nonce_label.to_vec(), taint, sessions: 0 }
    }
}

pub fn session_nonce(label: &[u8], counter: u64) -> [u8; 16] {
    let h = hash_parts(&[b"enclave-nonce", label, &counter.to_be_bytes()]);
    h.0[..16].try_into().expect("16 bytes")
}

impl KeyAccess for EnclaveKeyAccess<'_> {
    fn reexecute(&mut self, key_epoch: u32, ciphertext: &[u8]) -> Result<ReexecReport, String> {
        self.sessions += 1;
        let mut ctx = EnclaveContext::new(self.measurement);
        let quote = ctx.attest(self.root, session_nonce(&self.nonce_label, self.sessions), self.now);
        let result = provision(self.kms, &mut ctx, &quote, key_epoch, self.now).and_then(|()| {
            self.taint.observe(Role::EnclaveContext, Label::Plaintext);
            ctx.reexecute(ciphertext)
        });
        ctx.zeroize();
        self.taint.observe(Role::Auditor, Label::Commitment);
        result.map_err(|e| e.to_string())
    }
}
