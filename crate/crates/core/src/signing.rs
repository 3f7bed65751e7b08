//! Operator, shard and attestation-root signatures.
//!
//! The default scheme is ECDSA over secp256k1 with SHA-256 message digests
//! and RFC 6979 nonces, so a given key signs a given message to the same
//! bytes on every run.

use std::fmt;
use std::str::FromStr;

use k256::ecdsa::signature::{Signer as _, Verifier as _};
use k256::ecdsa::{Signature as EcdsaSignature, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::hash::hash_parts;

pub const PUBLIC_KEY_LEN: usize = 33;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignError {
    #[error("signing failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {what}: {detail}")]
pub struct KeyFormatError {
    pub what: &'static str,
    pub detail: String,
}

macro_rules! hex_bytes {
    ($name:ident, $len:expr, $what:literal) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, KeyFormatError> {
                bytes.try_into().map(Self).map_err(|_| KeyFormatError {
                    what: $what,
                    detail: format!("expected {} bytes, got {}", $len, bytes.len()),
                })
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl FromStr for $name {
            type Err = KeyFormatError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let bytes = hex::decode(s).map_err(|e| KeyFormatError { what: $what, detail: e.to_string() })?;
                Self::from_slice(&bytes)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_bytes!(PublicKey, PUBLIC_KEY_LEN, "public key");
hex_bytes!(Signature, SIGNATURE_LEN, "signature");

pub trait Signer {
    fn public_key(&self) -> PublicKey;
    fn sign(&self, message: &[u8]) -> Result<Signature, SignError>;
}

#[derive(Clone)]
pub struct EcdsaSigner {
    key: SigningKey,
    public: PublicKey,
}

impl fmt::Debug for EcdsaSigner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EcdsaSigner").field("public", &self.public).finish_non_exhaustive()
    }
}

impl EcdsaSigner {
    /// Derives a key from arbitrary seed bytes, retrying on the negligible
    /// chance the digest is not a valid scalar.
    pub fn from_seed(seed: &[u8]) -> Self {
        let mut counter = 0u32;
        loop {
            let digest = hash_parts(&[b"optiverify/signing-key", seed, &counter.to_be_bytes()]);
            if let Ok(key) = SigningKey::from_bytes(digest.as_bytes().into()) {
                return Self::from_signing_key(key);
            }
            counter += 1;
        }
    }

    fn from_signing_key(key: SigningKey) -> Self {
        let point = key.verifying_key().to_encoded_point(true);
        let public = PublicKey(point.as_bytes().try_into().expect("compressed point is 33 bytes"));
        Self { key, public }
    }
}

impl Signer for EcdsaSigner {
    fn public_key(&self) -> PublicKey {
        self.public
    }

    fn sign(&self, message: &[u8]) -> Result<Signature, SignError> {
        let sig: EcdsaSignature = self.key.try_sign(message).map_err(|e| SignError::Backend(e.to_string()))?;
        Ok(Signature(sig.to_bytes().into()))
    }
}

pub fn verify_signature(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_sec1_bytes(public_key.as_bytes()) else {
        return false;
    };
    let Ok(sig) = EcdsaSignature::from_slice(signature.as_bytes()) else {
        return false;
    };
    vk.verify(message, &sig).is_ok()
}
