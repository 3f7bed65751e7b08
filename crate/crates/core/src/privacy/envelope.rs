//! Hybrid payload encryption to the application key.
//!
//! Layout: `version u8 || epoch u32 BE || ephemeral public key (33) || nonce (12) || AEAD ciphertext`.
//! The AEAD key is HKDF-SHA256 over the ECDH shared secret, the header is the
//! associated data, and the plaintext is `len(request) u32 BE || request || output`.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use k256::elliptic_curve::sec1::ToEncodedPoint;
use rand_core::{CryptoRng, RngCore};
use sha2::Sha256;
use thiserror::Error;
use zeroize::Zeroizing;

use crate::signing::PublicKey;

pub const ENVELOPE_VERSION: u8 = 1;
const HEADER_LEN: usize = 1 + 4 + 33 + 12;
const KDF_INFO: &[u8] = b"optiverify/envelope/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("ciphertext shorter than its header")]
    Truncated,
    #[error("unsupported envelope version {0}")]
    Version(u8),
    #[error("invalid public key")]
    BadKey,
    #[error("authentication failed")]
    Integrity,
}

pub(crate) fn generate_secret<R: RngCore + CryptoRng>(rng: &mut R) -> Zeroizing<[u8; 32]> {
    Zeroizing::new(k256::SecretKey::random(rng).to_bytes().into())
}

pub fn public_key_for_secret(secret: &[u8; 32]) -> Result<PublicKey, EnvelopeError> {
    let sk = k256::SecretKey::from_slice(secret).map_err(|_| EnvelopeError::BadKey)?;
    PublicKey::from_slice(sk.public_key().to_encoded_point(true).as_bytes()).map_err(|_| EnvelopeError::BadKey)
}

fn derive_key(shared: &[u8], header: &[u8]) -> Zeroizing<[u8; 32]> {
    let mut key = Zeroizing::new([0u8; 32]);
    Hkdf::<Sha256>::new(Some(&header[5..38]), shared)
        .expand(&[KDF_INFO, &header[1..5]].concat(), key.as_mut())
        .expect("32 bytes is a valid HKDF length");
    key
}

pub fn seal<R: RngCore + CryptoRng>(
    app_key: &PublicKey,
    epoch: u32,
    request: &[u8],
    output: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, EnvelopeError> {
    let recipient = k256::PublicKey::from_sec1_bytes(app_key.as_bytes()).map_err(|_| EnvelopeError::BadKey)?;
    let ephemeral = k256::SecretKey::random(rng);
    let shared = k256::ecdh::diffie_hellman(ephemeral.to_nonzero_scalar(), recipient.as_affine());
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);

    let mut header = Vec::with_capacity(HEADER_LEN);
    header.push(ENVELOPE_VERSION);
    header.extend_from_slice(&epoch.to_be_bytes());
    header.extend_from_slice(ephemeral.public_key().to_encoded_point(true).as_bytes());
    header.extend_from_slice(&nonce);

    let key = derive_key(shared.raw_secret_bytes(), &header);
    let mut plaintext = Zeroizing::new(Vec::with_capacity(4 + request.len() + output.len()));
    plaintext.extend_from_slice(&(request.len() as u32).to_be_bytes());
    plaintext.extend_from_slice(request);
    plaintext.extend_from_slice(output);
    let body = ChaCha20Poly1305::new(Key::from_slice(key.as_ref()))
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: &plaintext, aad: &header })
        .map_err(|_| EnvelopeError::Integrity)?;
    header.extend_from_slice(&body);
    Ok(header)
}

/// Key epoch named in an envelope header.
pub fn envelope_epoch(ciphertext: &[u8]) -> Result<u32, EnvelopeError> {
    if ciphertext.len() < HEADER_LEN {
        return Err(EnvelopeError::Truncated);
    }
    if ciphertext[0] != ENVELOPE_VERSION {
        return Err(EnvelopeError::Version(ciphertext[0]));
    }
    Ok(u32::from_be_bytes(ciphertext[1..5].try_into().expect("4 bytes")))
}

/// Decrypted request and output. Only reachable through an enclave context.
pub(crate) type Plaintext = (Zeroizing<Vec<u8>>, Zeroizing<Vec<u8>>);

pub(crate) fn open(secret: &[u8; 32], ciphertext: &[u8]) -> Result<Plaintext, EnvelopeError> {
    envelope_epoch(ciphertext)?;
    let (header, body) = ciphertext.split_at(HEADER_LEN);
    let sk = k256::SecretKey::from_slice(secret).map_err(|_| EnvelopeError::BadKey)?;
    let ephemeral = k256::PublicKey::from_sec1_bytes(&header[5..38]).map_err(|_| EnvelopeError::Integrity)?;
    let shared = k256::ecdh::diffie_hellman(sk.to_nonzero_scalar(), ephemeral.as_affine());
    let key = derive_key(shared.raw_secret_bytes(), header);
    let plaintext = Zeroizing::new(
        ChaCha20Poly1305::new(Key::from_slice(key.as_ref()))
            .decrypt(Nonce::from_slice(&header[38..50]), Payload { msg: body, aad: header })
            .map_err(|_| EnvelopeError::Integrity)?,
    );
    if plaintext.len() < 4 {
        return Err(EnvelopeError::Integrity);
    }
    let n = u32::from_be_bytes(plaintext[..4].try_into().expect("4 bytes")) as usize;
    if plaintext.len() - 4 < n {
        return Err(EnvelopeError::Integrity);
    }
    Ok((Zeroizing::new(plaintext[4..4 + n].to_vec()), Zeroizing::new(plaintext[4 + n..].to_vec())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keypair(seed: u64) -> (Zeroizing<[u8; 32]>, PublicKey) {
        let sk = generate_secret(&mut ChaCha20Rng::seed_from_u64(seed));
        let pk = public_key_for_secret(&sk).unwrap();
        (sk, pk)
    }

    #[test]
    fn wrong_key_fails() {
        let (_, pk) = keypair(1);
        let (other, _) = keypair(2);
        let ct = seal(&pk, 1, b"req", b"out", &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        assert_eq!(open(&other, &ct).unwrap_err(), EnvelopeError::Integrity);
        assert_eq!(envelope_epoch(&ct), Ok(1));
        assert_eq!(envelope_epoch(&ct[..10]), Err(EnvelopeError::Truncated));
    }

    #[test]
    fn sealing_is_reproducible_from_the_rng() {
        let (_, pk) = keypair(1);
        let a = seal(&pk, 1, b"r", b"o", &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        let b = seal(&pk, 1, b"r", b"o", &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn round_trip(req in proptest::collection::vec(any::<u8>(), 0..64), out in proptest::collection::vec(any::<u8>(), 0..64), seed in any::<u64>()) {
            let (sk, pk) = keypair(seed);
            let ct = seal(&pk, 3, &req, &out, &mut ChaCha20Rng::seed_from_u64(seed ^ 1)).unwrap();
            let (r, o) = open(&sk, &ct).unwrap();
            prop_assert_eq!((r.to_vec(), o.to_vec()), (req, out));
        }

        #[test]
        fn any_bit_flip_fails(bit in any::<prop::sample::Index>(), seed in any::<u64>()) {
            let (sk, pk) = keypair(seed);
            let mut ct = seal(&pk, 3, b"request", b"output", &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
            let i = bit.index(ct.len() * 8);
            ct[i / 8] ^= 1 << (i % 8);
            prop_assert!(open(&sk, &ct).is_err());
        }
    }
}
