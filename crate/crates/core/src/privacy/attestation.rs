//! Mock hardware attestation. A single simulator-held root key stands in for
//! the hardware vendor and signs quotes binding a code measurement to a nonce.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{Canonical, DecodeError, Reader, Writer, TAG_QUOTE};
use crate::hash::Hash32;
use crate::signing::{verify_signature, EcdsaSigner, PublicKey, Signature, Signer};

pub const DEFAULT_FRESHNESS_WINDOW: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationQuote {
    pub measurement: Hash32,
    pub nonce: [u8; 16],
    pub issued_at: u64,
    pub hw_sig: Signature,
}

fn quote_payload(measurement: &Hash32, nonce: &[u8; 16], issued_at: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(TAG_QUOTE).fixed(measurement.as_bytes()).fixed(nonce).u64(issued_at);
    w.finish()
}

impl Canonical for AttestationQuote {
    fn encode_into(&self, w: &mut Writer) {
        w.u8(TAG_QUOTE)
            .fixed(self.measurement.as_bytes())
            .fixed(&self.nonce)
            .u64(self.issued_at)
            .fixed(self.hw_sig.as_bytes());
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag("attestation quote", TAG_QUOTE)?;
        Ok(Self { measurement: Hash32(r.array()?), nonce: r.array()?, issued_at: r.u64()?, hw_sig: Signature(r.array()?) })
    }
}

#[derive(Debug, Clone)]
pub struct AttestationRoot {
    signer: EcdsaSigner,
}

impl AttestationRoot {
    pub fn from_seed(seed: &[u8]) -> Self {
        Self { signer: EcdsaSigner::from_seed(&[b"attestation-root:".as_slice(), seed].concat()) }
    }

    pub fn public_key(&self) -> PublicKey {
        self.signer.public_key()
    }

    pub fn attest(&self, measurement: Hash32, nonce: [u8; 16], now: u64) -> AttestationQuote {
        let hw_sig = self.signer.sign(&quote_payload(&measurement, &nonce, now)).expect("attestation root signs");
        AttestationQuote { measurement, nonce, issued_at: now, hw_sig }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum QuoteRejection {
    #[error("quote signature does not verify under the attestation root")]
    BadSignature,
    #[error("measurement is not approved")]
    Unapproved,
    #[error("quote is {age} epochs old, window is {window}")]
    Stale { age: u64, window: u64 },
    #[error("quote is dated in the future")]
    FromFuture,
    #[error("quote nonce was already used")]
    Replayed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotePolicy {
    pub root: PublicKey,
    pub approved: BTreeSet<Hash32>,
    pub freshness_window: u64,
}

impl QuotePolicy {
    /// All checks except nonce reuse.
    pub fn check(&self, quote: &AttestationQuote, now: u64) -> Result<(), QuoteRejection> {
        let payload = quote_payload(&quote.measurement, &quote.nonce, quote.issued_at);
        if !verify_signature(&self.root, &payload, &quote.hw_sig) {
            return Err(QuoteRejection::BadSignature);
        }
        if !self.approved.contains(&quote.measurement) {
            return Err(QuoteRejection::Unapproved);
        }
        if quote.issued_at > now {
            return Err(QuoteRejection::FromFuture);
        }
        let age = now - quote.issued_at;
        if age > self.freshness_window {
            return Err(QuoteRejection::Stale { age, window: self.freshness_window });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct NonceCache {
    seen: BTreeSet<[u8; 16]>,
}

impl NonceCache {
    pub fn contains(&self, nonce: &[u8; 16]) -> bool {
        self.seen.contains(nonce)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Full verification; a nonce is consumed only by a quote that passes.
pub fn verify_quote(quote: &AttestationQuote, policy: &QuotePolicy, now: u64, cache: &mut NonceCache) -> Result<(), QuoteRejection> {
    policy.check(quote, now)?;
    if !cache.seen.insert(quote.nonce) {
        return Err(QuoteRejection::Replayed);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::hash_commit;

    fn setup() -> (AttestationRoot, QuotePolicy, Hash32) {
        let root = AttestationRoot::from_seed(b"t");
        let m = hash_commit(b"approved");
        let policy = QuotePolicy { root: root.public_key(), approved: [m].into(), freshness_window: DEFAULT_FRESHNESS_WINDOW };
        (root, policy, m)
    }

    #[test]
    fn accepted_then_replay_rejected() {
        let (root, policy, m) = setup();
        let mut cache = NonceCache::default();
        let q = root.attest(m, [1; 16], 5);
        assert_eq!(verify_quote(&q, &policy, 5, &mut cache), Ok(()));
        assert_eq!(verify_quote(&q, &policy, 5, &mut cache), Err(QuoteRejection::Replayed));
    }

    #[test]
    fn unapproved_forged_stale_future() {
        let (root, policy, m) = setup();
        let mut cache = NonceCache::default();
        let bad = root.attest(hash_commit(b"other"), [2; 16], 5);
        assert_eq!(verify_quote(&bad, &policy, 5, &mut cache), Err(QuoteRejection::Unapproved));
        let forged = AttestationRoot::from_seed(b"fake").attest(m, [3; 16], 5);
        assert_eq!(verify_quote(&forged, &policy, 5, &mut cache), Err(QuoteRejection::BadSignature));
        let q = root.attest(m, [4; 16], 5);
        assert_eq!(verify_quote(&q, &policy, 7, &mut cache.clone()), Ok(()));
        assert_eq!(verify_quote(&q, &policy, 8, &mut cache), Err(QuoteRejection::Stale { age: 3, window: 2 }));
        assert_eq!(verify_quote(&q, &policy, 4, &mut cache), Err(QuoteRejection::FromFuture));
        assert!(cache.is_empty());
        let mut tampered = q.clone();
        tampered.issued_at = 6;
        assert_eq!(verify_quote(&tampered, &policy, 6, &mut cache), Err(QuoteRejection::BadSignature));
    }

    #[test]
    fn encoding_round_trip() {
        let (root, _, m) = setup();
        let q = root.attest(m, [9; 16], 1);
        assert_eq!(AttestationQuote::canonical_decode(&q.canonical_encode()).unwrap(), q);
    }
}
